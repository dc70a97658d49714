//! Stable CSV serialization of simulation outputs.
//!
//! Column order is fixed, headers carry unit suffixes, floats are written
//! with Rust's shortest round-trip formatting and no locale dependence, so
//! identical runs produce byte-identical files.

use crate::allocator::IterTraceRow;
use crate::sim::{AllocInvocation, SimRecord};
use std::fmt::Write as _;

/// Header of `timeseries.csv` for `n` inverters.
pub fn timeseries_header(n: usize) -> String {
    let mut h = String::from("t_s");
    for k in 1..=n {
        for col in [
            "i{}_d_a", "i{}_q_a", "v{}_d_v", "v{}_q_v", "p{}_w", "q{}_var", "iref{}_d_a",
            "iref{}_q_a", "rhat{}_ohm", "beta{}", "lyap{}",
        ] {
            h.push(',');
            h.push_str(&col.replace("{}", &k.to_string()));
        }
    }
    h.push_str(",sum_p_w,sum_q_var,alloc_residual_p_w,alloc_residual_q_var");
    h
}

/// Header of `allocator_trace.csv`.
pub const ALLOC_TRACE_HEADER: &str = "t_s,iter,node,lambda,nu,p_w,q_var,residual_p_w";

pub fn timeseries_csv(records: &[SimRecord]) -> String {
    let n = records.first().map(|r| r.ibrs.len()).unwrap_or(0);
    let mut out = timeseries_header(n);
    out.push('\n');
    for r in records {
        write!(out, "{}", r.t_s).unwrap();
        for s in &r.ibrs {
            write!(
                out,
                ",{},{},{},{},{},{},{},{},{},{},{}",
                s.i.d,
                s.i.q,
                s.v.d,
                s.v.q,
                s.p_w,
                s.q_var,
                s.i_ref.d,
                s.i_ref.q,
                s.r_hat_ohm,
                s.beta,
                s.lyapunov
            )
            .unwrap();
        }
        writeln!(
            out,
            ",{},{},{},{}",
            r.sum_p_w, r.sum_q_var, r.alloc_residual_p_w, r.alloc_residual_q_var
        )
        .unwrap();
    }
    out
}

/// Header of per-iteration solver traces.
pub const ITER_TRACE_HEADER: &str = "iter,node,lambda,nu,p_w,q_var,residual_p_w";

pub fn iter_trace_csv(rows: &[IterTraceRow]) -> String {
    let mut out = String::from(ITER_TRACE_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.iter, r.node, r.lambda, r.nu, r.p, r.q, r.residual
        )
        .unwrap();
    }
    out
}

pub fn alloc_trace_csv(trace: &[AllocInvocation]) -> String {
    let mut out = String::from(ALLOC_TRACE_HEADER);
    out.push('\n');
    for inv in trace {
        for (node, (lambda, nu, p, q)) in inv.nodes.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                inv.t_s,
                inv.iters,
                node + 1,
                lambda,
                nu,
                p,
                q,
                inv.residual_p_w
            )
            .unwrap();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dq::Dq;
    use crate::sim::IbrSample;

    #[test]
    fn timeseries_header_is_pinned() {
        assert_eq!(
            timeseries_header(2),
            "t_s,i1_d_a,i1_q_a,v1_d_v,v1_q_v,p1_w,q1_var,iref1_d_a,iref1_q_a,rhat1_ohm,beta1,lyap1,\
             i2_d_a,i2_q_a,v2_d_v,v2_q_v,p2_w,q2_var,iref2_d_a,iref2_q_a,rhat2_ohm,beta2,lyap2,\
             sum_p_w,sum_q_var,alloc_residual_p_w,alloc_residual_q_var"
        );
    }

    #[test]
    fn rows_serialize_all_columns() {
        let record = SimRecord {
            t_s: 0.1,
            ibrs: vec![IbrSample {
                i: Dq::new(1.0, -2.0),
                v: Dq::new(392.0, 0.5),
                p_w: 392.0,
                q_var: -784.0,
                i_ref: Dq::new(1.0, 0.0),
                r_hat_ohm: 0.027,
                beta: 1.0,
                lyapunov: 1e-6,
            }],
            sum_p_w: 392.0,
            sum_q_var: -784.0,
            alloc_residual_p_w: 1e-9,
            alloc_residual_q_var: 0.0,
        };
        let csv = timeseries_csv(&[record]);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), timeseries_header(1));
        let row = lines.next().unwrap();
        assert_eq!(row.split(',').count(), 1 + 11 + 4);
        assert!(row.starts_with("0.1,1,-2,392,0.5,392,-784,1,0,0.027,1,"));
    }

    #[test]
    fn iteration_trace_matches_budgeted_solve() {
        use crate::allocator::{solve, trace_iterations, AllocatorState, CostSpec, StopRule};
        use crate::graph::build_topology;

        let topo = build_topology(&[(1, 2), (2, 3)], 3, Some(3.0)).unwrap();
        let cost = CostSpec::quadratic();
        let mut traced = AllocatorState::new(3, 0.1);
        let rows = trace_iterations(&mut traced, &topo, 1.0, 0.0, &cost, 20).unwrap();
        assert_eq!(rows.len(), 60);
        assert_eq!(rows.last().unwrap().iter, 20);

        let mut direct = AllocatorState::new(3, 0.1);
        solve(&mut direct, &topo, 1.0, 0.0, &cost, StopRule::Budget(20)).unwrap();
        assert_eq!(traced, direct);

        let csv = iter_trace_csv(&rows);
        assert_eq!(csv.lines().next().unwrap(), ITER_TRACE_HEADER);
        assert_eq!(csv.lines().count(), 61);
    }

    #[test]
    fn trace_emits_one_row_per_node() {
        let inv = AllocInvocation {
            t_s: 0.0,
            iters: 50,
            nodes: vec![(0.1, 0.0, 0.5, 0.0), (-0.2, 0.0, 0.5, 0.0)],
            residual_p_w: 1e-10,
            residual_q_var: 0.0,
        };
        let csv = alloc_trace_csv(&[inv]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], ALLOC_TRACE_HEADER);
        assert!(lines[1].starts_with("0,50,1,0.1,"));
        assert!(lines[2].starts_with("0,50,2,-0.2,"));
    }
}
