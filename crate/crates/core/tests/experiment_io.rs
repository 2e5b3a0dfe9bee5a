use std::fs;

use mcnoc::experiment::{load_spec, run_experiment, CSV_COLUMNS};

#[test]
fn results_and_cell_files() {
    let dir = tempfile::tempdir().unwrap();
    let spec_path = dir.path().join("x.toml");
    fs::write(
        &spec_path,
        "[experiment]\nkind = \"chip-count-sweep\"\narchs = [\"1C4M\", \"2C4M\"]\nseeds = [1, 2]\nenergy_cycles = 1200\n\
         [run]\ntotal_cycles = 1200\nwarmup_cycles = 200\n",
    )
    .unwrap();
    let spec = load_spec(&spec_path).unwrap();
    let out = dir.path().join("out");
    let r = run_experiment(&spec, Some(&out)).unwrap();
    assert_eq!(r.cells.len(), 8);
    assert_eq!(r.gain_rows().count(), 2);

    let csv = fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), CSV_COLUMNS.join(","));
    assert_eq!(csv.lines().count(), 1 + 8 + 2);
    assert_eq!(csv, r.to_csv().unwrap());

    let names: Vec<String> =
        fs::read_dir(out.join("cells")).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    assert_eq!(names.len(), 8);
    assert!(names.iter().all(|n| n.ends_with(".json")));
    let one: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("cells").join(&names[0])).unwrap()).unwrap();
    assert!(one["bandwidth_report"]["throughput"].is_number());
    assert!(one["energy_report"]["avg_packet_energy_pj"].is_number());
}

#[test]
fn gains_average_over_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let spec_path = dir.path().join("g.toml");
    fs::write(
        &spec_path,
        "[experiment]\nkind = \"fabric-compare\"\narchs = [\"2C4M\"]\nseeds = [3, 4]\nenergy_cycles = 1000\n\
         [run]\ntotal_cycles = 1000\nwarmup_cycles = 100\n",
    )
    .unwrap();
    let r = run_experiment(&load_spec(&spec_path).unwrap(), None).unwrap();
    let mean = |f: &str, get: &dyn Fn(&mcnoc::experiment::CellResult) -> f64| {
        let v: Vec<f64> = r.cells.iter().filter(|c| c.cell.fabric.to_string() == f).map(get).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let e_i = mean("interposer", &|c| c.avg_packet_energy_pj);
    let e_w = mean("wireless", &|c| c.avg_packet_energy_pj);
    let g = r.gain_rows().next().unwrap();
    assert!((g.energy_gain_pct.unwrap() - 100.0 * (e_i - e_w) / e_i).abs() < 1e-9);
    let b_i = mean("interposer", &|c| c.bandwidth_bits_per_s_per_core);
    let b_w = mean("wireless", &|c| c.bandwidth_bits_per_s_per_core);
    assert!((g.bandwidth_gain_pct.unwrap() - 100.0 * (b_w - b_i) / b_i).abs() < 1e-9);
}
