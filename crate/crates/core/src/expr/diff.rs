//! Symbolic differentiation with light constant folding.

use super::{BinOp, Func, Node, Variable};

fn konst(n: &Node) -> Option<f64> {
    match n {
        Node::Const(c) => Some(*c),
        _ => None,
    }
}

pub(crate) fn neg(a: Node) -> Node {
    match a {
        Node::Const(c) => Node::Const(-c),
        Node::Neg(inner) => *inner,
        other => Node::Neg(Box::new(other)),
    }
}

pub(crate) fn add(a: Node, b: Node) -> Node {
    match (konst(&a), konst(&b)) {
        (Some(x), Some(y)) => Node::Const(x + y),
        (Some(x), _) if x == 0.0 => b,
        (_, Some(y)) if y == 0.0 => a,
        _ => Node::Bin(BinOp::Add, Box::new(a), Box::new(b)),
    }
}

pub(crate) fn sub(a: Node, b: Node) -> Node {
    match (konst(&a), konst(&b)) {
        (Some(x), Some(y)) => Node::Const(x - y),
        (Some(x), _) if x == 0.0 => neg(b),
        (_, Some(y)) if y == 0.0 => a,
        _ => Node::Bin(BinOp::Sub, Box::new(a), Box::new(b)),
    }
}

pub(crate) fn mul(a: Node, b: Node) -> Node {
    match (konst(&a), konst(&b)) {
        (Some(x), Some(y)) => Node::Const(x * y),
        (Some(x), _) | (_, Some(x)) if x == 0.0 => Node::Const(0.0),
        (Some(x), _) if x == 1.0 => b,
        (_, Some(y)) if y == 1.0 => a,
        (Some(x), _) if x == -1.0 => neg(b),
        (_, Some(y)) if y == -1.0 => neg(a),
        _ => Node::Bin(BinOp::Mul, Box::new(a), Box::new(b)),
    }
}

pub(crate) fn div(a: Node, b: Node) -> Node {
    match (konst(&a), konst(&b)) {
        (Some(x), _) if x == 0.0 => Node::Const(0.0),
        (_, Some(y)) if y == 1.0 => a,
        (Some(x), Some(y)) if y != 0.0 => Node::Const(x / y),
        _ => Node::Bin(BinOp::Div, Box::new(a), Box::new(b)),
    }
}

pub(crate) fn pow(a: Node, b: Node) -> Node {
    match konst(&b) {
        Some(y) if y == 1.0 => a,
        Some(y) if y == 0.0 => Node::Const(1.0),
        _ => Node::Bin(BinOp::Pow, Box::new(a), Box::new(b)),
    }
}

pub(crate) fn bin(op: BinOp, a: Node, b: Node) -> Node {
    match op {
        BinOp::Add => add(a, b),
        BinOp::Sub => sub(a, b),
        BinOp::Mul => mul(a, b),
        BinOp::Div => div(a, b),
        BinOp::Pow => pow(a, b),
    }
}

fn call(f: Func, a: Node) -> Node {
    Node::Call(f, Box::new(a))
}

fn depends(n: &Node, var: Variable) -> bool {
    match n {
        Node::Const(_) => false,
        Node::Var(v) => *v == var,
        Node::Neg(a) | Node::Call(_, a) => depends(a, var),
        Node::Bin(_, a, b) => depends(a, var) || depends(b, var),
    }
}

pub(crate) fn derivative(n: &Node, var: Variable) -> Node {
    if !depends(n, var) {
        return Node::Const(0.0);
    }
    match n {
        Node::Const(_) => Node::Const(0.0),
        Node::Var(v) => Node::Const(if *v == var { 1.0 } else { 0.0 }),
        Node::Neg(a) => neg(derivative(a, var)),
        Node::Bin(op, a, b) => {
            let da = derivative(a, var);
            let db = derivative(b, var);
            let (a, b) = ((**a).clone(), (**b).clone());
            match op {
                BinOp::Add => add(da, db),
                BinOp::Sub => sub(da, db),
                BinOp::Mul => add(mul(da, b.clone()), mul(a, db)),
                BinOp::Div => {
                    // (a'b - ab') / b^2
                    let num = sub(mul(da, b.clone()), mul(a, db));
                    div(num, pow(b, Node::Const(2.0)))
                }
                BinOp::Pow => {
                    if !depends(&b, var) {
                        // b a^(b-1) a'
                        let lowered = pow(a, sub(b.clone(), Node::Const(1.0)));
                        mul(mul(b, lowered), da)
                    } else {
                        // a^b (b' ln a + b a'/a)
                        let whole = Node::Bin(BinOp::Pow, Box::new(a.clone()), Box::new(b.clone()));
                        let t1 = mul(db, call(Func::Log, a.clone()));
                        let t2 = div(mul(b, da), a);
                        mul(whole, add(t1, t2))
                    }
                }
            }
        }
        Node::Call(f, a) => {
            let da = derivative(a, var);
            let a = (**a).clone();
            let outer = match f {
                Func::Sin => call(Func::Cos, a),
                Func::Cos => neg(call(Func::Sin, a)),
                Func::Exp => call(Func::Exp, a),
                Func::Log => div(Node::Const(1.0), a),
                Func::Sqrt => div(Node::Const(0.5), call(Func::Sqrt, a)),
                Func::Tanh => sub(Node::Const(1.0), pow(call(Func::Tanh, a), Node::Const(2.0))),
            };
            mul(outer, da)
        }
    }
}
