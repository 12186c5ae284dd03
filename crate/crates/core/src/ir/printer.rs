use std::fmt::{self, Write as _};

use super::{AxisSet, EinsumNode, EinsumProgram, LabelList, UnaryFn};

fn write_use(out: &mut String, name: &str, labels: &LabelList, promoted: Option<AxisSet>) {
    out.push_str(name);
    out.push('[');
    for (axis, l) in labels.iter().enumerate() {
        if axis > 0 {
            out.push(',');
        }
        match promoted {
            Some(mask) if mask.contains(axis) => out.push_str(&l.upper()),
            _ => out.push_str(l.as_str()),
        }
    }
    out.push(']');
}

fn render_node(
    node: &EinsumNode,
    out_mask: Option<AxisSet>,
    in_masks: &[Option<AxisSet>],
) -> String {
    let mut s = String::new();
    write_use(&mut s, &node.output.name, &node.output_labels, out_mask);
    let agg: Vec<String> = node.agg_labels().iter().map(|l| l.to_string()).collect();
    let _ = write!(s, " = {}[{}] ", node.op.aggregate.keyword(), agg.join(","));

    let mut body = String::new();
    for (k, u) in node.inputs.iter().enumerate() {
        if k > 0 {
            let _ = write!(body, " {} ", node.op.combine.symbol());
        }
        write_use(&mut body, &u.tensor, &u.labels, in_masks[k]);
    }
    match node.op.unary {
        UnaryFn::Identity => s.push_str(&body),
        UnaryFn::Relu => {
            let _ = write!(s, "relu({body})");
        }
        UnaryFn::Exp => {
            let _ = write!(s, "exp({body})");
        }
        UnaryFn::Square => {
            let _ = write!(s, "square({body})");
        }
        UnaryFn::Scale(c) => {
            let _ = write!(s, "scale({c:?}, {body})");
        }
    }
    s
}

/// Upper-case-lower-case statement for a node under the given promoted
/// sets (output first, then inputs in slot order).
pub fn render_uclc(node: &EinsumNode, output: AxisSet, inputs: &[AxisSet]) -> String {
    let masks: Vec<Option<AxisSet>> = inputs.iter().copied().map(Some).collect();
    render_node(node, Some(output), &masks)
}

/// Canonical program text. Parsing it back yields an equal program.
impl fmt::Display for EinsumProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in self.sources() {
            let b: Vec<String> = d.bound.as_slice().iter().map(|x| x.to_string()).collect();
            writeln!(f, "tensor {}[{}];", d.name, b.join(","))?;
        }
        for n in self.nodes() {
            let masks: Vec<Option<AxisSet>> = n.inputs.iter().map(|u| u.hint).collect();
            writeln!(f, "{}", render_node(n, n.output_hint, &masks))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_program;

    #[test]
    fn canonical_text() {
        let p = parse_program("tensor U[4,4];tensor V[4,4]\nW[i,k]=U[i,j]*V[j,k]").unwrap();
        assert_eq!(
            p.to_string(),
            "tensor U[4,4];\ntensor V[4,4];\nW[i,k] = sum[j] U[i,j] * V[j,k]\n"
        );
        let n = &p.nodes()[0];
        assert_eq!(
            render_uclc(n, AxisSet::from_axes([0, 1]), &[AxisSet::from_axes([0]), AxisSet::from_axes([1])]),
            "W[I,K] = sum[j] U[I,j] * V[j,K]"
        );
    }

    #[test]
    fn unary_forms_round_trip() {
        let text = "tensor A[3,2]; tensor B[3,2]
            M[i] = max[j] (A[i,j] - B[i,j])^2
            R[i,j] = relu(A[i,J] + B[i,J])
            S[i] = sum[] scale(-0.25, M[I])
            E[i] = exp(S[i])";
        let p = parse_program(text).unwrap();
        let again = parse_program(&p.to_string()).unwrap();
        assert_eq!(p, again);
        assert_eq!(p.to_string(), again.to_string());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn statement() -> impl Strategy<Value = String> {
            let labels = ["i", "j", "k"];
            (
                proptest::sample::subsequence(labels.to_vec(), 1..=3),
                proptest::sample::subsequence(labels.to_vec(), 1..=3),
                any::<u8>(),
                0usize..4,
                0usize..5,
                any::<bool>(),
            )
                .prop_map(|(a, b, keep, comb, un, max)| {
                    let mut out: Vec<&str> = a.iter().chain(b.iter()).copied().collect();
                    out.sort();
                    out.dedup();
                    let out: Vec<&str> = out
                        .into_iter()
                        .enumerate()
                        .filter(|(i, _)| keep >> i & 1 == 1)
                        .map(|(_, l)| l)
                        .collect();
                    let x = format!("X{}[{}]", a.len(), a.join(","));
                    let y = format!("Y{}[{}]", b.len(), b.join(","));
                    let op = ["*", "+", "-", "/"][comb];
                    let inner = format!("{x} {op} {y}");
                    let body = match un {
                        0 => inner,
                        1 => format!("relu({inner})"),
                        2 => format!("exp({inner})"),
                        3 => format!("({inner})^2"),
                        _ => format!("scale(1.5, {inner})"),
                    };
                    let agg = if max { "max" } else { "sum" };
                    format!(
                        "tensor X1[2]; tensor X2[2,2]; tensor X3[2,2,2];
                         tensor Y1[2]; tensor Y2[2,2]; tensor Y3[2,2,2];
                         W[{}] = {agg} {body}",
                        out.join(",")
                    )
                })
        }

        proptest! {
            #[test]
            fn print_parse_fixed_point(text in statement()) {
                let p = parse_program(&text).unwrap();
                let printed = p.to_string();
                let again = parse_program(&printed).unwrap();
                prop_assert_eq!(&p, &again);
                prop_assert_eq!(printed, again.to_string());
            }
        }
    }
}
