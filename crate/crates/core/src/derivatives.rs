//! Finite-difference derivatives and convective derivatives at the nodes.
//!
//! These stencils are diagnostics; the solver works with the finite element
//! route in [`crate::fem::project_derivatives`].

use crate::error::Result;
use crate::grid::{ScalarField, SpaceTimeGrid, VectorField};

/// Partial derivatives `(∂_t, ∂_{x¹}, ∂_{x²})` of a scalar field as nodal fields.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageDerivatives {
    pub t: ScalarField,
    pub x1: ScalarField,
    pub x2: ScalarField,
}

impl ImageDerivatives {
    pub fn grid(&self) -> &SpaceTimeGrid {
        self.t.grid()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { t: self.t.map(|v| c * v), x1: self.x1.map(|v| c * v), x2: self.x2.map(|v| c * v) }
    }

    pub(crate) fn check_grid(&self, grid: &SpaceTimeGrid) -> Result<()> {
        self.t.grid().same_as(grid)?;
        self.x1.grid().same_as(grid)?;
        self.x2.grid().same_as(grid)
    }
}

/// Central differences inside, first-order one-sided differences on the faces.
pub fn nodal_derivatives(field: &ScalarField) -> ImageDerivatives {
    let g = *field.grid();
    let v = field.values();
    let (nt, ni, nj) = (g.frames(), g.height(), g.width());
    let stride = [g.frame_len(), nj, 1];
    let step = [g.dt(), g.spacing(), g.spacing()];
    let mut out = [vec![0.0; v.len()], vec![0.0; v.len()], vec![0.0; v.len()]];
    for k in 0..nt {
        for i in 0..ni {
            for j in 0..nj {
                let n = g.index(k, i, j);
                for (axis, (pos, len)) in [(k, nt), (i, ni), (j, nj)].into_iter().enumerate() {
                    let s = stride[axis];
                    out[axis][n] = if pos == 0 {
                        (v[n + s] - v[n]) / step[axis]
                    } else if pos + 1 == len {
                        (v[n] - v[n - s]) / step[axis]
                    } else {
                        (v[n + s] - v[n - s]) / (2.0 * step[axis])
                    };
                }
            }
        }
    }
    let [t, x1, x2] = out;
    ImageDerivatives {
        t: ScalarField::from_raw(g, t),
        x1: ScalarField::from_raw(g, x1),
        x2: ScalarField::from_raw(g, x2),
    }
}

fn transport(d: &ImageDerivatives, u: &VectorField) -> Vec<f64> {
    let (ft, f1, f2) = (d.t.values(), d.x1.values(), d.x2.values());
    let (u1, u2) = (u.u1(), u.u2());
    (0..ft.len()).map(|n| ft[n] + f1[n] * u1[n] + f2[n] * u2[n]).collect()
}

/// `D_u f = f_t + ∇f·u` at every node.
pub fn convective_derivative(f: &ScalarField, u: &VectorField) -> Result<ScalarField> {
    f.grid().same_as(u.grid())?;
    let d = nodal_derivatives(f);
    Ok(ScalarField::from_raw(*f.grid(), transport(&d, u)))
}

/// Componentwise `D_u f` for a vector-valued `f`.
pub fn convective_derivative_vector(f: &VectorField, u: &VectorField) -> Result<VectorField> {
    f.grid().same_as(u.grid())?;
    let d1 = nodal_derivatives(&f.component_field(0));
    let d2 = nodal_derivatives(&f.component_field(1));
    Ok(VectorField::from_raw(*f.grid(), transport(&d1, u), transport(&d2, u)))
}

/// Convective acceleration `D_u u = u_t + ∇u u`.
pub fn convective_acceleration(u: &VectorField) -> VectorField {
    convective_derivative_vector(u, u).expect("a field shares its own grid")
}
