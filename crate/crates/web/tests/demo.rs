use attnae_web::Demo;
use serde_json::Value;

#[test]
fn operations_require_their_inputs() {
    let mut d = Demo::new(0);
    assert!(d.detect().is_err());
    assert!(d.heatmap(10).is_err());
    assert!(d.scenario("bogus").is_err());
    assert!(d.set_thresholds(0.0, 3.0).is_err());
    d.scenario("spike").unwrap();
    assert!(d
        .detect()
        .unwrap_err()
        .to_string()
        .contains("train or load"));
}

#[test]
fn scenario_json_has_six_channels_and_truth() {
    let mut d = Demo::new(3);
    let v: Value = serde_json::from_str(&d.scenario("concurrent").unwrap()).unwrap();
    assert_eq!(v["channels"].as_array().unwrap().len(), 6);
    assert_eq!(v["series"][0].as_array().unwrap().len(), 300);
    let truth: usize = v["mask"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| {
            c.as_array()
                .unwrap()
                .iter()
                .filter(|b| b.as_bool().unwrap())
                .count()
        })
        .sum();
    assert!(truth > 0);
    let n: Value = serde_json::from_str(&d.scenario("normal").unwrap()).unwrap();
    assert!(n["mask"][0]
        .as_array()
        .unwrap()
        .iter()
        .all(|b| !b.as_bool().unwrap()));
}

#[test]
fn train_detect_and_heatmap() {
    let mut d = Demo::new(1);
    let t: Value = serde_json::from_str(&d.train(2, 600).unwrap()).unwrap();
    assert_eq!(t["epochs"], 2);
    d.scenario("spike").unwrap();
    let r: Value = serde_json::from_str(&d.detect().unwrap()).unwrap();
    assert_eq!(r["flags"].as_array().unwrap().len(), 6);
    assert_eq!(r["starts"].as_array().unwrap().len(), 281);
    let acc = r["accuracy"]["overall"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    let svg = d.heatmap(180).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("ram_pool"));
}

#[test]
fn loads_its_own_artifacts() {
    let mut a = Demo::new(2);
    a.train(1, 600).unwrap();
    let ck = a.checkpoint.as_ref().unwrap().to_json().unwrap();
    let base = serde_json::to_string(a.baseline.as_ref().unwrap()).unwrap();
    let mut b = Demo::new(2);
    b.load(&ck, &base).unwrap();
    a.scenario("drift").unwrap();
    b.scenario("drift").unwrap();
    assert_eq!(a.detect().unwrap(), b.detect().unwrap());
    assert!(b.load("{}", &base).is_err());
}
