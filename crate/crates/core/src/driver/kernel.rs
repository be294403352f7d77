use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Configuration, KernelId, Workload};
use crate::error::Result;
use crate::fft::{pffttg, FftVariant, SignalMatrix};
use crate::gemm::{pmmtg_in_place, Matrix, PmmtgOptions, Variant};
use crate::measure::VirtualClock;

/// A workload that can be executed repeatedly under different
/// configurations.
pub trait Kernel {
    /// Restore inputs before a timed run. Not timed.
    fn setup(&mut self) -> Result<()> {
        Ok(())
    }

    fn run(&mut self, config: Configuration) -> Result<()>;
}

pub struct GemmKernel {
    a: Matrix,
    b: Matrix,
    c_initial: Matrix,
    c: Matrix,
    alpha: f64,
    beta: f64,
    variant: Variant,
    options: PmmtgOptions,
}

impl GemmKernel {
    pub fn new(workload: &Workload, seed: u64, options: PmmtgOptions) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = workload.n;
        let a = Matrix::random(n, &mut rng);
        let b = Matrix::random(n, &mut rng);
        let c_initial = Matrix::random(n, &mut rng);
        let variant = match workload.kernel_id {
            KernelId::GemmV => Variant::V,
            KernelId::GemmS => Variant::S,
            _ => Variant::H,
        };
        GemmKernel {
            a,
            b,
            c: c_initial.clone(),
            c_initial,
            alpha: workload.scalar_alpha,
            beta: workload.scalar_beta,
            variant,
            options,
        }
    }
}

impl Kernel for GemmKernel {
    fn setup(&mut self) -> Result<()> {
        self.c
            .as_mut_slice()
            .copy_from_slice(self.c_initial.as_slice());
        Ok(())
    }

    fn run(&mut self, config: Configuration) -> Result<()> {
        pmmtg_in_place(
            &self.a,
            &self.b,
            &mut self.c,
            self.alpha,
            self.beta,
            self.variant,
            config,
            self.options,
        )
    }
}

pub struct FftKernel {
    input: SignalMatrix,
    work: SignalMatrix,
    workload: Workload,
    variant: FftVariant,
}

impl FftKernel {
    pub fn new(workload: &Workload, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = SignalMatrix::random(workload.n, &mut rng);
        let variant = match workload.kernel_id {
            KernelId::FftV => FftVariant::V,
            _ => FftVariant::H,
        };
        FftKernel {
            work: input.clone(),
            input,
            workload: workload.clone(),
            variant,
        }
    }
}

impl Kernel for FftKernel {
    fn setup(&mut self) -> Result<()> {
        self.work
            .as_mut_slice()
            .copy_from_slice(self.input.as_slice());
        Ok(())
    }

    fn run(&mut self, config: Configuration) -> Result<()> {
        pffttg(
            &mut self.work,
            self.workload.fft_sign,
            self.variant,
            config,
            self.workload.transpose_block,
        )
    }
}

type TimeFn = Box<dyn Fn(&Configuration) -> f64 + Send + Sync>;

/// Advances a virtual clock by a fixed time per configuration instead of
/// computing anything.
pub struct StubKernel {
    clock: VirtualClock,
    time: TimeFn,
}

impl StubKernel {
    /// Takes `1 / (g * t)` seconds.
    pub fn new(clock: VirtualClock) -> Self {
        Self::with_time(clock, |c| 1.0 / c.total_threads() as f64)
    }

    pub fn with_time<F>(clock: VirtualClock, time: F) -> Self
    where
        F: Fn(&Configuration) -> f64 + Send + Sync + 'static,
    {
        StubKernel {
            clock,
            time: Box::new(time),
        }
    }
}

impl Kernel for StubKernel {
    fn run(&mut self, config: Configuration) -> Result<()> {
        self.clock.advance((self.time)(&config));
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fft::dft2d_naive;
    use crate::gemm::gemm_naive;
    use crate::measure::Clock;

    #[test]
    fn gemm_kernel_restores_c_between_runs() {
        let w = Workload::new(KernelId::GemmV, 12);
        let mut k = GemmKernel::new(&w, 3, PmmtgOptions::default());
        let want = gemm_naive(&k.a, &k.b, &k.c_initial, 1.0, 1.0).unwrap();
        for _ in 0..2 {
            k.setup().unwrap();
            k.run(Configuration::new(3, 2).unwrap()).unwrap();
            assert!(k.c.max_abs_diff(&want) <= 1e-9 * want.max_abs());
        }
    }

    #[test]
    fn fft_kernel_restores_input_between_runs() {
        let w = Workload::new(KernelId::FftV, 8);
        let mut k = FftKernel::new(&w, 3);
        let want = dft2d_naive(&k.input, w.fft_sign);
        for _ in 0..2 {
            k.setup().unwrap();
            k.run(Configuration::new(2, 2).unwrap()).unwrap();
            assert!(k.work.max_abs_diff(&want) < 1e-9);
        }
    }

    #[test]
    fn stub_advances_clock() {
        let clock = VirtualClock::new();
        let mut k = StubKernel::new(clock.clone());
        k.run(Configuration::new(2, 2).unwrap()).unwrap();
        assert_eq!(clock.now(), 0.25);
    }
}
