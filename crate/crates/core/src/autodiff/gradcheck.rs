//! Central-difference gradient checking against the tape's reverse pass.

use super::{Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Finite-difference step `h`.
    pub step: f32,
    /// Maximum tolerated relative error.
    pub tolerance: f64,
    /// Rounding noise budget of one function evaluation, in units of
    /// `f32::EPSILON * |f|`.
    ///
    /// A central difference of an `f32` function cannot resolve derivatives
    /// below roughly `noise_ulps * eps * |f| / h`; relative errors are measured
    /// against that floor so components that are pure rounding noise do not
    /// dominate the report.
    pub noise_ulps: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-3,
            tolerance: 1e-3,
            noise_ulps: 4.0,
        }
    }
}

impl GradCheckConfig {
    pub fn new(step: f32, tolerance: f64) -> Self {
        Self {
            step,
            tolerance,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct ElementCheck {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub elements: Vec<ElementCheck>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&ElementCheck> {
        self.elements
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} elements, max rel err {:.3e} (tol {:.0e}) {}",
            self.elements.len(),
            self.max_rel_error,
            self.tolerance,
            if self.passed { "PASS" } else { "FAIL" }
        )?;
        if let Some(w) = self.worst() {
            write!(
                f,
                "; worst [{}] analytic {:.6e} numeric {:.6e}",
                w.index, w.analytic, w.numeric
            )?;
        }
        Ok(())
    }
}

fn eval<F>(f: &F, x: &Tensor) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let out = f(&mut tape, xv)?;
    let v = tape.value(out)?.item()?;
    if !v.is_finite() {
        return Err(TensorError::NonFinite("grad_check objective"));
    }
    Ok(f64::from(v))
}

/// Checks every element of `x`.
pub fn grad_check<F>(
    f: F,
    x: &Tensor,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, TensorError>,
{
    let all: Vec<usize> = (0..x.numel()).collect();
    grad_check_indices(f, x, &all, cfg)
}

/// Checks only the listed elements of `x` (useful for large parameter sets).
pub fn grad_check_indices<F>(
    f: F,
    x: &Tensor,
    indices: &[usize],
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, TensorError>,
{
    if !(cfg.step > 0.0) {
        return Err(TensorError::InvalidArgument(
            "grad_check step must be positive".into(),
        ));
    }
    if !x.is_finite() {
        return Err(TensorError::NonFinite("grad_check input"));
    }
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let out = f(&mut tape, xv)?;
    let f0 = f64::from(tape.value(out)?.item()?);
    if !f0.is_finite() {
        return Err(TensorError::NonFinite("grad_check objective"));
    }
    let grads = tape.backward(out)?;
    let analytic = grads
        .get(xv)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()));

    let mut elements = Vec::with_capacity(indices.len());
    let mut probe = x.clone();
    for &i in indices {
        let orig = x.data()[i];
        let plus = orig + cfg.step;
        let minus = orig - cfg.step;
        probe.data_mut()[i] = plus;
        let fp = eval(&f, &probe)?;
        probe.data_mut()[i] = minus;
        let fm = eval(&f, &probe)?;
        probe.data_mut()[i] = orig;

        let h = f64::from(plus) - f64::from(minus);
        let numeric = (fp - fm) / h;
        let a = f64::from(analytic.data()[i]);
        let scale = f0.abs().max(fp.abs()).max(fm.abs());
        let noise = cfg.noise_ulps * f64::from(f32::EPSILON) * scale / h;
        let floor = noise / cfg.tolerance;
        let denom = a.abs().max(numeric.abs()).max(floor).max(f64::MIN_POSITIVE);
        elements.push(ElementCheck {
            index: i,
            analytic: a,
            numeric,
            rel_error: (a - numeric).abs() / denom,
        });
    }
    let max_rel_error = elements.iter().map(|e| e.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        passed: max_rel_error <= cfg.tolerance,
        max_rel_error,
        tolerance: cfg.tolerance,
        elements,
    })
}
