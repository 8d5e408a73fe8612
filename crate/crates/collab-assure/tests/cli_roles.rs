//! The networked subcommands end to end: both roles in one test process,
//! talking over loopback TCP, writing reports that must agree.

use collab_assure::cli::{cli_main, EXIT_OK};

#[test]
fn p1_and_p2_subcommands_agree_on_the_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("shared.csv");
    assert_eq!(
        cli_main([
            "gen-data".into(),
            "--out".into(),
            csv.display().to_string(),
            "--rows".into(),
            "200".into(),
            "--features".into(),
            "4".into(),
            "--seed".into(),
            "11".into(),
        ]),
        EXIT_OK
    );

    // Grab a free loopback port, then hand it to both roles.
    let addr = {
        let probe = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        probe.local_addr().unwrap().to_string()
    };
    let report_p1 = dir.path().join("p1.json");
    let report_p2 = dir.path().join("p2.json");
    let csv_text = csv.display().to_string();

    let common = |role: &str, extra_addr_flag: &str, addr: &str, report: &std::path::Path| {
        vec![
            role.to_string(),
            "--dataset".into(),
            csv_text.clone(),
            "--classes".into(),
            "2".into(),
            "--epsilon".into(),
            "5".into(),
            "--epochs".into(),
            "6".into(),
            "--batch-size".into(),
            "16".into(),
            "--hidden".into(),
            "4".into(),
            "--d1-frac".into(),
            "0.2".into(),
            "--d2-frac".into(),
            "0.4".into(),
            "--seed".into(),
            "21".into(),
            extra_addr_flag.into(),
            addr.into(),
            "--report".into(),
            report.display().to_string(),
        ]
    };

    let p1_args = common("p1", "--listen", &addr, &report_p1);
    let p2_args = common("p2", "--connect", &addr, &report_p2);

    let (c1, c2) = std::thread::scope(|scope| {
        let listener = scope.spawn(move || cli_main(p1_args));
        // Give the listener a moment to bind before connecting; the role
        // retries are deliberately not implemented.
        std::thread::sleep(std::time::Duration::from_millis(300));
        let c2 = cli_main(p2_args);
        (listener.join().unwrap(), c2)
    });
    assert_eq!((c1, c2), (EXIT_OK, EXIT_OK));

    let v1: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_p1).unwrap()).unwrap();
    let v2: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_p2).unwrap()).unwrap();
    assert_eq!(v1["improved"], v2["improved"]);
    assert_eq!(v1["accuracies"], v2["accuracies"]);
    assert_eq!(v1["role"], "p1");
    assert_eq!(v2["role"], "p2");
}
