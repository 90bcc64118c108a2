use std::ffi::{CStr, CString};
use std::ptr;

use tlu_ffi::*;

fn last_error() -> String {
    let p = tlu_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn scalar_functions() {
    let mut v = 0.0;
    unsafe {
        assert_eq!(tlu_kl_gauss_gauss(0.0, 1.0, 1.0, 1.0, &mut v), TluStatus::Ok);
        assert!((v - 0.5).abs() < 1e-15);
        assert!(tlu_last_error().is_null());
        assert_eq!(tlu_kl_t_gauss(6.0, 0.0, 0.5, 0.0, 0.5, &mut v), TluStatus::Ok);
        assert!(v > 0.0);
        assert_eq!(tlu_student_t_entropy(6.0, 1.0, &mut v), TluStatus::Ok);
        assert!((v - 1.5917213251653148).abs() < 1e-12);
        let a = [1.0, 2.0, 3.0];
        assert_eq!(tlu_ccc(a.as_ptr(), a.as_ptr(), 3, &mut v), TluStatus::Ok);
        assert_eq!(v, 1.0);
        assert_eq!(tlu_one_tailed_t_test(a.as_ptr(), 3, a.as_ptr(), 3, &mut v), TluStatus::Ok);
        assert!((v - 0.5).abs() < 1e-15);
    }
}

#[test]
fn errors_map_to_codes_and_messages() {
    let mut v = 0.0;
    unsafe {
        assert_eq!(tlu_kl_t_gauss(2.0, 0.0, 1.0, 0.0, 1.0, &mut v), TluStatus::Domain);
        assert!(last_error().contains("2"), "{}", last_error());
        assert_eq!(tlu_kl_gauss_gauss(0.0, 1.0, 0.0, 1.0, ptr::null_mut()), TluStatus::NullPointer);
        assert!(last_error().contains("result"));
        let a = [1.0];
        assert_eq!(tlu_ccc(a.as_ptr(), a.as_ptr(), 1, &mut v), TluStatus::InvalidInput);
        assert_eq!(tlu_ccc(ptr::null(), a.as_ptr(), 1, &mut v), TluStatus::NullPointer);
        // a success clears the previous message
        assert_eq!(tlu_kl_gauss_gauss(0.0, 1.0, 0.0, 1.0, &mut v), TluStatus::Ok);
        assert!(tlu_last_error().is_null());
    }
}

#[test]
fn label_distribution_handle() {
    // 2 frames × 3 annotators
    let ann = [0.1, 0.2, 0.3, -0.1, 0.0, 0.1];
    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(tlu_label_distribution_from_annotations(ann.as_ptr(), 2, 3, &mut h), TluStatus::Ok);
        assert_eq!(tlu_label_distribution_len(h), 2);
        let (mut nu, mut m, mut s) = (0.0, [0.0; 2], [0.0; 2]);
        assert_eq!(tlu_label_distribution_get(h, &mut nu, m.as_mut_ptr(), s.as_mut_ptr(), 2), TluStatus::Ok);
        assert_eq!(nu, 3.0);
        assert!((m[0] - 0.2).abs() < 1e-15 && (m[1] - 0.0).abs() < 1e-15);
        assert!((s[0] - 0.1).abs() < 1e-15);
        assert_eq!(
            tlu_label_distribution_get(h, &mut nu, m.as_mut_ptr(), s.as_mut_ptr(), 5),
            TluStatus::ShapeMismatch
        );
        tlu_label_distribution_free(h);
        tlu_label_distribution_free(ptr::null_mut());

        // two annotators cannot define ν > 2
        let mut h2 = ptr::null_mut();
        assert_eq!(tlu_label_distribution_from_annotations(ann.as_ptr(), 3, 2, &mut h2), TluStatus::Domain);
        assert!(h2.is_null());
        assert!(last_error().contains("nu"));
    }
}

#[test]
fn network_handle_predicts_and_loads() {
    let dims = [2usize, 5, 1];
    let mut net = ptr::null_mut();
    let x = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
    let (mut mu, mut sd) = ([0.0; 3], [0.0; 3]);
    unsafe {
        assert_eq!(tlu_network_new(dims.as_ptr(), 3, 1.0, 9, &mut net), TluStatus::Ok);
        assert_eq!(tlu_network_input_dim(net), 2);
        assert_eq!(
            tlu_network_predict(net, x.as_ptr(), 3, 2, 30, 4, mu.as_mut_ptr(), sd.as_mut_ptr()),
            TluStatus::Ok
        );
        assert!(mu.iter().all(|v| v.is_finite()) && sd.iter().all(|&v| v > 0.0));
        let mu_first = mu;
        assert_eq!(
            tlu_network_predict(net, x.as_ptr(), 3, 2, 30, 4, mu.as_mut_ptr(), sd.as_mut_ptr()),
            TluStatus::Ok
        );
        assert_eq!(mu, mu_first);
        assert_eq!(
            tlu_network_predict(net, x.as_ptr(), 3, 2, 1, 4, mu.as_mut_ptr(), sd.as_mut_ptr()),
            TluStatus::InvalidInput
        );
        tlu_network_free(net);

        let missing = CString::new("/nonexistent/checkpoint.json").unwrap();
        let mut loaded = ptr::null_mut();
        assert_eq!(tlu_network_load(missing.as_ptr(), &mut loaded), TluStatus::Io);
        assert!(loaded.is_null());
        assert!(last_error().contains("/nonexistent/checkpoint.json"));
    }
}

#[test]
fn loads_checkpoints_written_by_core() {
    use tlu_core::bayes_net::BayesNet;
    use tlu_core::checkpoint::Checkpoint;
    use tlu_core::distributions::rng_from_seed;
    use tlu_core::training::TrainConfig;

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    let net = BayesNet::new(&[3, 4, 1], 1.0, &mut rng_from_seed(1)).unwrap();
    Checkpoint::new(net, &TrainConfig::default(), 1).save(&path).unwrap();
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(tlu_network_load(c.as_ptr(), &mut h), TluStatus::Ok);
        assert_eq!(tlu_network_input_dim(h), 3);
        tlu_network_free(h);
    }
}
