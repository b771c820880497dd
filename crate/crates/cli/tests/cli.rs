use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use promo_bn::eval::{generate_synthetic, load_sales_csv, table3_report, write_sales_csv};
use promo_bn::inference::{analytic_state_mean, posterior_given_equation_evidence, DensityMethod};
use promo_bn::{parse_network, BUNDLED_MODEL};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

fn promo_bn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_promo-bn"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn field(text: &str, key: &str) -> f64 {
    let line = text
        .lines()
        .find(|l| l.starts_with(key))
        .unwrap_or_else(|| panic!("no `{key}` in {text}"));
    line[key.len()..].trim().parse().unwrap()
}

#[test]
fn validate_accepts_the_bundled_model() {
    let out = promo_bn(&["validate", fixture("fig2.bnet").to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(stdout(&out).lines().next(), Some("OK"));
}

#[test]
fn validate_reports_positions_and_exits_with_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.bnet");
    std::fs::write(
        &path,
        "network \"x\" {\n  node A { kind: chance; states: [a]; prior: [1]; }\n}\n",
    )
    .unwrap();
    let out = promo_bn(&["validate", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("bad.bnet:2:"), "{}", stderr(&out));

    let out = promo_bn(&[
        "validate",
        dir.path().join("missing.bnet").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_flags_print_usage_and_exit_2() {
    let out = promo_bn(&["sample"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("Usage"));
    let out = promo_bn(&["sample", "x.bnet", "--n", "many"]);
    assert_eq!(out.status.code(), Some(2));
    let out = promo_bn(&[
        "posterior",
        fixture("fig2.bnet").to_str().unwrap(),
        "--sales",
        "175",
        "--method",
        "magic",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(promo_bn(&["--help"]).status.success());
}

#[test]
fn posterior_prints_the_engine_values() {
    let out = promo_bn(&[
        "posterior",
        fixture("fig2.bnet").to_str().unwrap(),
        "--sales",
        "175",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let net = parse_network(BUNDLED_MODEL).unwrap();
    let report =
        posterior_given_equation_evidence(&net, 175.0, 5.0, DensityMethod::convolution()).unwrap();
    for state in ["Catalogue", "InStore", "NoPromotion"] {
        let p = report.probability("Promotions", state).unwrap();
        assert!(
            text.contains(&format!("{state:<11}  {p:.4}")),
            "{state} {p:.4} in\n{text}"
        );
    }
    assert!(text.contains("(convolution-density)"));
}

#[test]
fn posterior_outside_support_is_an_input_error() {
    let out = promo_bn(&[
        "posterior",
        fixture("fig2.bnet").to_str().unwrap(),
        "--sales",
        "-5",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("undefined"), "{}", stderr(&out));
}

#[test]
fn clamped_sample_matches_the_closed_form() {
    let out = promo_bn(&[
        "sample",
        fixture("fig2.bnet").to_str().unwrap(),
        "--n",
        "10000",
        "--seed",
        "7",
        "--clamp",
        "Promotions=Catalogue",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let net = parse_network(BUNDLED_MODEL).unwrap();
    let analytic = analytic_state_mean(&net, "Catalogue").unwrap();
    assert!((field(&text, "analytic mean:") - analytic).abs() < 1e-4);
    let se = field(&text, "sd:") / 100.0;
    assert!(
        (field(&text, "mean:") - analytic).abs() < 3.0 * se,
        "{text}"
    );
    assert_eq!(
        text,
        stdout(&promo_bn(&[
            "sample",
            fixture("fig2.bnet").to_str().unwrap(),
            "--n",
            "10000",
            "--seed",
            "7",
            "--clamp",
            "Promotions=Catalogue",
        ]))
    );

    let out = promo_bn(&[
        "sample",
        fixture("fig2.bnet").to_str().unwrap(),
        "--clamp",
        "Promotions",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn report_writes_the_library_json_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("table3.json");
    let data = fixture("sales_synthetic.csv");
    let model = fixture("fig2.bnet");
    let out = promo_bn(&[
        "report",
        data.to_str().unwrap(),
        model.to_str().unwrap(),
        "--n",
        "10000",
        "--seed",
        "42",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let written = std::fs::read_to_string(&out_path).unwrap();
    let records = load_sales_csv(&data).unwrap();
    let net = parse_network(BUNDLED_MODEL).unwrap();
    let report = table3_report(&records, &net, 10_000, 42).unwrap();
    assert_eq!(written, report.to_json().unwrap());
    assert!(stdout(&out).starts_with(&report.render()));
}

#[test]
fn report_names_the_bad_row() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bad.csv");
    std::fs::write(
        &csv,
        "week_start,actual_units,retailer_forecast_units,promo_type,price,location\n\
         2017-01-02,10,11,none,10,gondola\n2017-01-09,12,11,discount,10,gondola\n",
    )
    .unwrap();
    let out = promo_bn(&[
        "report",
        csv.to_str().unwrap(),
        fixture("fig2.bnet").to_str().unwrap(),
        "--out",
        dir.path().join("t.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("row 2"), "{}", stderr(&out));
}

#[test]
fn synth_reproduces_the_bundled_fixture() {
    let out = promo_bn(&["synth", "--seed", "42"]);
    assert!(out.status.success());
    let mut expected = Vec::new();
    write_sales_csv(&mut expected, &generate_synthetic(42)).unwrap();
    assert_eq!(out.stdout, expected);
    assert_eq!(
        std::fs::read(fixture("sales_synthetic.csv")).unwrap(),
        expected
    );
}

#[test]
fn serve_rejects_a_bad_port_variable() {
    let out = Command::new(env!("CARGO_BIN_EXE_promo-bn"))
        .arg("serve")
        .env("PROMO_BN_PORT", "not-a-port")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("PROMO_BN_PORT"));
}

#[test]
fn serve_answers_http_requests() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_promo-bn"))
        .args(["serve", "--port", "0"])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stderr.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let addr = line
        .trim()
        .rsplit("http://")
        .next()
        .unwrap()
        .replace("0.0.0.0", "127.0.0.1");

    let mut stream = TcpStream::connect(&addr).unwrap();
    let body = BUNDLED_MODEL;
    write!(
        stream,
        "POST /sessions HTTP/1.1\r\nHost: localhost\r\nContent-Type: text/plain\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut response = String::new();
    stream.read_to_string(&mut response).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(response.starts_with("HTTP/1.1 201"), "{response}");
    assert!(response.contains("\"session_id\""));
}
