//! The plan files shipped in `plans/` must stay valid.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use codec_energy::pipeline::{plan_jobs, CodingConfig, Plan, PlanOptions, SequenceClass};

fn shipped(name: &str) -> Plan {
    let path: PathBuf = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../plans").join(name);
    Plan::load(&path, PlanOptions { check_sources: false }).unwrap_or_else(|e| panic!("{e}"))
}

fn per_variant(plan: &Plan) -> BTreeMap<(String, CodingConfig), usize> {
    let mut counts = BTreeMap::new();
    for j in plan_jobs(plan).jobs {
        *counts.entry((j.variant_id, j.config)).or_default() += 1;
    }
    counts
}

fn key(v: &str, c: CodingConfig) -> (String, CodingConfig) {
    (v.to_string(), c)
}

#[test]
fn ctc_sequence_set() {
    let plan = shipped("ctc_hm_vs_vtm.json");
    assert_eq!(plan.sequences.len(), 26);
    let count = |c: SequenceClass| plan.sequences.iter().filter(|s| s.class == c).count();
    assert_eq!(count(SequenceClass::A1) + count(SequenceClass::A2), 6);
    assert_eq!(count(SequenceClass::E), 3);
    assert_eq!(plan.reference().variant_id, "HM-16.20");
}

#[test]
fn ctc_job_counts() {
    let plan = shipped("ctc_hm_vs_vtm.json");
    let counts = per_variant(&plan);
    for v in ["HM-16.20", "VTM-7.0"] {
        assert_eq!(counts[&key(v, CodingConfig::AI)], 104);
        assert_eq!(counts[&key(v, CodingConfig::LB)], 80);
        assert_eq!(counts[&key(v, CodingConfig::RA)], 92);
    }
    assert_eq!(plan_jobs(&plan).jobs.len(), 552);
}

#[test]
fn simd_variant_reuses_bitstreams() {
    let plan = shipped("vtm_simd_off.json");
    let jobs = plan_jobs(&plan).jobs;
    assert_eq!(jobs.len(), 828);
    let by_key = |v: &str| -> BTreeMap<_, _> {
        jobs.iter()
            .filter(|j| j.variant_id == v)
            .map(|j| ((j.sequence.clone(), j.config, j.qp), j))
            .collect()
    };
    let simd = by_key("VTM-7.0");
    let plain = by_key("VTM-7.0-noSIMD");
    assert_eq!(simd.len(), plain.len());
    for (k, a) in &simd {
        let b = plain[k];
        assert_eq!(a.bitstream_path, b.bitstream_path);
        assert_eq!(a.encode_hash, b.encode_hash);
        assert_ne!(a.content_hash, b.content_hash);
    }
}

#[test]
fn ablation_variants_stay_in_their_configuration() {
    let plan = shipped("vtm_tool_ablation.json");
    let counts = per_variant(&plan);
    for v in ["VTM-7.0-MIP-off", "VTM-7.0-ISP-off"] {
        assert_eq!(counts[&key(v, CodingConfig::AI)], 104);
        assert!(!counts.contains_key(&key(v, CodingConfig::RA)));
    }
    for tool in ["AMVR", "TPM", "LFNST", "MTS", "BDOF", "DMVR", "ALF"] {
        let v = format!("VTM-7.0-{tool}-off");
        assert_eq!(counts[&key(&v, CodingConfig::RA)], 92);
        assert!(!counts.contains_key(&key(&v, CodingConfig::AI)));
        assert!(!plan.variant(&v).unwrap().tool_overrides.is_empty());
    }
    assert_eq!(plan_jobs(&plan).jobs.len(), 1048);
}

#[test]
fn energy_efficient_plan() {
    let plan = shipped("energy_efficient_ra.json");
    assert_eq!(plan.configs, [CodingConfig::RA]);
    assert_eq!(plan_jobs(&plan).jobs.len(), 276);
    let v = plan.variant("VTM-7.0-energy-efficient").unwrap();
    assert_eq!(v.tool_overrides, ["--ALF=0", "--BIO=0", "--DMVR=0", "--ISP=0"]);
}

#[test]
fn source_check_reports_missing_sequences() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../plans/ctc_hm_vs_vtm.json");
    let err = Plan::load(&path, PlanOptions::default()).unwrap_err().to_string();
    assert!(err.contains("sequences/"), "{err}");
}
