use super::{BinaryOp, Coord, Node, ScalarExpr, UnaryOp};

impl ScalarExpr {
    /// Exact partial derivative with respect to `u`, constant folded.
    pub fn diff(&self, u: Coord) -> ScalarExpr {
        match self.node() {
            Node::Num(_) => ScalarExpr::zero(),
            Node::Var(c) => {
                if *c == u {
                    ScalarExpr::one()
                } else {
                    ScalarExpr::zero()
                }
            }
            Node::Unary(op, e) => {
                let de = e.diff(u);
                if de.is_zero() {
                    return ScalarExpr::zero();
                }
                match op {
                    UnaryOp::Neg => -de,
                    UnaryOp::Sin => e.cos() * de,
                    UnaryOp::Cos => -(e.sin() * de),
                    UnaryOp::Exp => self * de,
                    UnaryOp::Log => de / e,
                    UnaryOp::Sqrt => de / (2.0 * self),
                }
            }
            Node::Binary(op, a, b) => {
                let da = a.diff(u);
                let db = b.diff(u);
                match op {
                    BinaryOp::Add => da + db,
                    BinaryOp::Sub => da - db,
                    BinaryOp::Mul => &da * b + a * &db,
                    BinaryOp::Div => {
                        if db.is_zero() {
                            da / b
                        } else {
                            (&da * b - a * &db) / b.powi(2)
                        }
                    }
                }
            }
            Node::Powi(e, n) => {
                let de = e.diff(u);
                if de.is_zero() {
                    return ScalarExpr::zero();
                }
                (*n as f64) * e.powi(n - 1) * de
            }
        }
    }

    /// Repeated partial derivative along the listed coordinates.
    pub fn diff_many(&self, coords: &[Coord]) -> ScalarExpr {
        coords.iter().fold(self.clone(), |e, &c| e.diff(c))
    }
}
