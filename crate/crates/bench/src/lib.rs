//! Workload builders shared by the criterion benches.

use nalgebra::DMatrix;
use tkhl_core::{
    gram, one_way_design, pairwise_contrast, sample_landmarks, ContrastMatrix, DesignBundle, Kernel, KernelSpec,
    LandmarkPlan, LandmarkStrategy, SimConfig,
};

pub struct Workload {
    pub data: DMatrix<f64>,
    pub kernel: Kernel,
    pub design: DesignBundle,
    pub contrast: ContrastMatrix,
}

impl Workload {
    /// Three Gaussian groups in `dims` dimensions with `n` points in total,
    /// the median-heuristic Gaussian kernel and the global contrast.
    pub fn gaussian_groups(n: usize, dims: usize, seed: u64) -> Workload {
        let per = n / 3;
        let sizes = vec![per, per, n - 2 * per];
        let config = SimConfig::two_group_null(per, dims, vec![1], 1, seed);
        let config = SimConfig { n_per_group: sizes, mean_shift: Vec::new(), ..config };
        let (data, labels) = tkhl_core::generate_dataset(&config, 0).expect("valid workload");
        let kernel = KernelSpec::default().resolve(&data).expect("kernel");
        let design = one_way_design(&labels).expect("design");
        let contrast = pairwise_contrast(3).expect("contrast");
        Workload { data, kernel, design, contrast }
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn gram(&self) -> tkhl_core::GramMatrix {
        gram(&self.data, &self.kernel).expect("gram")
    }

    pub fn landmarks(&self, q: usize, seed: u64) -> LandmarkPlan {
        sample_landmarks(self.n(), q, None, LandmarkStrategy::Uniform, seed).expect("landmarks")
    }
}
