//! End-to-end verification runs: seeded fault sweeps and the report files
//! they produce.

mod config;
mod report;
mod run;

pub use config::{ExperimentConfig, MetricsConfig, NoiseModel, ENV_OUT, ENV_SEED};
pub use report::{
    build_report, read_snippets, read_summary, schema, summary, write_bev, write_error_sweep, write_mda, write_report,
    write_trace, BevRow, EvalMode, MdaRow, Summary, SweepReport, BEV_FILE, BEV_HEADER, ERROR_SWEEP_FILE,
    ERROR_SWEEP_HEADER, MDA_FILE, MDA_HEADER, SNIPPETS_FILE, SUMMARY_FILE, TRACE_FILE, TRACE_HEADER,
};
pub use run::{
    demo_fusion, estimate_one_frame, estimate_snippet, rescore, run_faults, run_sweep, score_snippet, trace_frames, FrameRecord,
    FusionTrace, SnippetResult, TraceRow,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::EulerMisalignment;
    use crate::perturb::{InjectedFault, PerturbationConfig};

    fn small(n: usize) -> ExperimentConfig {
        ExperimentConfig {
            snippets: n,
            ..ExperimentConfig::default()
        }
    }

    fn untimed(mut v: Vec<SnippetResult>) -> Vec<SnippetResult> {
        for s in &mut v {
            s.timing = Default::default();
        }
        v
    }

    #[test]
    fn zero_fault_noiseless_snippet_is_negative() {
        let mut cfg = small(1);
        cfg.perturbation = PerturbationConfig::fixed(EulerMisalignment::ZERO);
        cfg.scene.pixel_noise_sigma = 0.0;
        let r = run_sweep(&cfg, Some(1)).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].frames.len(), 10);
        assert!(!r[0].verdict.positive);
        assert!(r[0].fused.unwrap().dr.max_abs() < 1e-9);
        assert!(r[0].correction().is_none());
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let cfg = small(12);
        let a = untimed(run_sweep(&cfg, Some(1)).unwrap());
        let b = untimed(run_sweep(&cfg, Some(4)).unwrap());
        assert_eq!(a, b);
        assert!(a.windows(2).all(|w| w[0].id < w[1].id));
    }

    #[test]
    fn rescore_with_same_config_reproduces() {
        let cfg = small(6);
        let a = untimed(run_sweep(&cfg, None).unwrap());
        let b = rescore(&cfg, &a, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn explicit_faults_keep_their_ids() {
        let cfg = small(0);
        let faults = [
            InjectedFault { id: 7, dr: EulerMisalignment::new(0.5, 0.0, 0.0) },
            InjectedFault { id: 3, dr: EulerMisalignment::ZERO },
        ];
        let r = run_faults(&cfg, &faults, None).unwrap();
        assert_eq!(r.iter().map(|s| s.id).collect::<Vec<_>>(), vec![3, 7]);
        assert_eq!(r[1].injected, faults[0].dr);
    }

    #[test]
    fn empty_sweep_gives_empty_report() {
        let cfg = small(0);
        let r = run_sweep(&cfg, None).unwrap();
        let rep = build_report(&cfg, &r);
        assert!(rep.mda.is_empty() && rep.error_sweep.is_empty() && rep.bev.is_empty());
    }

    #[test]
    fn report_has_three_modes_and_nine_bev_rows() {
        let cfg = small(20);
        let r = run_sweep(&cfg, None).unwrap();
        let rep = build_report(&cfg, &r);
        let modes: Vec<_> = rep.mda.iter().map(|m| m.mode).collect();
        assert_eq!(modes, EvalMode::ALL.to_vec());
        assert_eq!(rep.mda[0].counts.total(), 200);
        assert_eq!(rep.mda[2].counts.total(), 20);
        assert_eq!(rep.bev.len(), 9);
    }

    #[test]
    fn single_frame_trace_modes_agree() {
        let mut cfg = small(1);
        cfg.frames_per_snippet = 1;
        let t = demo_fusion(&cfg, 0).unwrap();
        assert_eq!(t.rows.len(), 1);
        let row = t.rows[0];
        assert!(row.kept);
        assert!((row.unweighted - row.estimate.dr).max_abs() < 1e-15);
        assert!((row.weighted.unwrap() - row.estimate.dr).max_abs() < 1e-15);
    }

    #[test]
    fn rejected_frame_appears_only_in_unweighted_mode() {
        let mut cfg = small(1);
        cfg.frames_per_snippet = 3;
        let fault = InjectedFault { id: 0, dr: EulerMisalignment::new(0.2, 0.0, 0.0) };
        let mut frames = estimate_snippet(&cfg.clone().resolved(), &fault).unwrap();
        frames[1].estimate.sigma = [0.1, 0.1, 0.35];
        frames[1].estimate.dr = EulerMisalignment::new(0.9, 0.0, 0.0);
        let t = trace_frames(&cfg.fusion, &fault, &frames);
        assert!(!t.rows[1].kept);
        let first = t.rows[0].weighted.unwrap();
        assert_eq!(t.rows[1].weighted.unwrap(), first);
        assert!(t.rows[1].unweighted.roll > first.roll + 0.2);
    }

    #[test]
    fn retries_exhausted_is_numerical() {
        let mut cfg = small(1);
        cfg.scene.n_points = 2;
        cfg.max_retries = 2;
        let err = run_sweep(&cfg, None).unwrap_err();
        assert!(err.is_numerical(), "{err}");
    }
}
