use crate::error::{Error, Result};
use crate::nn::{ParamSet, Scalar};

/// In-place exponential moving average: `teacher = alpha * teacher + (1 - alpha) * student`.
pub fn ema_update_inplace<S: Scalar>(teacher: &mut ParamSet<S>, student: &ParamSet<S>, alpha: f64) -> Result<()> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::Invalid(format!("EMA decay must lie in [0, 1), got {alpha}")));
    }
    if !teacher.same_structure(student) {
        return Err(Error::Shape("teacher and student parameter structures differ".into()));
    }
    let a = S::lit(alpha);
    let b = S::lit(1.0 - alpha);
    for (t, s) in teacher.tensors.iter_mut().zip(&student.tensors) {
        for (x, y) in t.data.iter_mut().zip(&s.data) {
            *x = a * *x + b * *y;
        }
    }
    Ok(())
}

pub fn ema_update<S: Scalar>(teacher: &ParamSet<S>, student: &ParamSet<S>, alpha: f64) -> Result<ParamSet<S>> {
    let mut t = teacher.clone();
    ema_update_inplace(&mut t, student, alpha)?;
    Ok(t)
}
