use loopsoup::green::GreenTable;
use loopsoup::lattice::{LatticeSpec, RngStream, Site};
use loopsoup::loopmeasure::prob_avoid;
use loopsoup::percolation::cluster_of;
use loopsoup::sampler::{
    occupation, read_sample, sample_cluster, sample_soup, thin_soup, write_sample, Explore, SoupParams, VertexOrder,
};
use loopsoup::validation::{avoidance_check, is_sub_soup, proportion, replicate};

fn z(p: f64, se: f64, exact: f64) -> f64 {
    (p - exact) / se
}

#[test]
fn same_seed_same_soup_any_thread_count() {
    let spec = LatticeSpec::new(3, 3, 0.1).unwrap();
    let p = SoupParams::new(&spec, 0.8, RngStream::new(42, 7)).unwrap();
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = one.install(|| sample_soup(&p).unwrap());
    let b = four.install(|| sample_soup(&p).unwrap());
    assert_eq!(a.loops, b.loops);
    assert!(!a.loops.is_empty());
    let c = sample_soup(&p.clone().with_stream(RngStream::new(43, 7))).unwrap();
    assert_ne!(a.loops, c.loops);
}

#[test]
fn avoidance_does_not_depend_on_vertex_order() {
    let spec = LatticeSpec::new(2, 2, 0.0).unwrap();
    let n = spec.site_count() as u32;
    let rev = VertexOrder::Custom((0..n).rev().collect());
    let base = SoupParams::new(&spec, 1.5, RngStream::new(1, 0)).unwrap();
    for (k, order) in [VertexOrder::Lexicographic, rev].into_iter().enumerate() {
        let p = base.clone().with_order(order).unwrap();
        let s = RngStream::new(100 + k as u64, 0);
        let (ok, lines) = avoidance_check(&spec, 1.5, 30_000, &|r| sample_soup(&p.clone().with_stream(s.derive(r)))).unwrap();
        assert!(ok, "{lines:?}");
    }
}

#[test]
fn massive_walks_match_determinant() {
    let spec = LatticeSpec::new(2, 1, 0.5).unwrap();
    let p = SoupParams::new(&spec, 2.0, RngStream::new(2, 0)).unwrap();
    let s = RngStream::new(2, 1);
    let (ok, lines) = avoidance_check(&spec, 2.0, 30_000, &|r| sample_soup(&p.clone().with_stream(s.derive(r)))).unwrap();
    assert!(ok, "{lines:?}");
}

#[test]
fn occupation_mean_and_zero_probability() {
    let (alpha, kappa) = (0.7, 0.2);
    let spec = LatticeSpec::new(2, 2, kappa).unwrap();
    let g = GreenTable::new(&spec, &[]).unwrap().entry_by_index(spec.center_index(), spec.center_index()).unwrap();
    let p = SoupParams::new(&spec, alpha, RngStream::new(3, 0)).unwrap();
    let s = RngStream::new(3, 1);
    let o = Site::origin(2);
    let n = 40_000;
    let xi = replicate(n, |r| Ok(occupation(&sample_soup(&p.clone().with_stream(s.derive(r)))?, &o) as f64)).unwrap();
    let (p0, se0) = proportion(xi.iter().map(|&x| x == 0.0));
    assert!(z(p0, se0, g.powf(-alpha)).abs() < 4.0);
    let mean = xi.iter().sum::<f64>() / n as f64;
    let var = xi.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    // Negative binomial mean alpha p / (1 - p) with p = 1 - 1/G.
    let exact = alpha * (g - 1.0);
    assert!(z(mean, (var / n as f64).sqrt(), exact).abs() < 4.0, "{mean} vs {exact}");
}

#[test]
fn kappa_thinning_matches_killed_measure() {
    let spec0 = LatticeSpec::new(2, 1, 0.0).unwrap();
    let spec1 = LatticeSpec::new(2, 1, 0.3).unwrap();
    let p = SoupParams::new(&spec0, 1.0, RngStream::new(4, 0)).unwrap();
    let s = RngStream::new(4, 1);
    let set = [Site::origin(2), Site(vec![1, 0])];
    let idx: Vec<u32> = set.iter().map(|x| spec0.index_of(x).unwrap() as u32).collect();
    let n = 40_000;
    let hits = replicate(n, |r| {
        let orig = sample_soup(&p.clone().with_stream(s.derive(r)))?;
        let thin = thin_soup(&orig, 0.8, 0.3, &s.derive(r).derive(9))?;
        assert!(is_sub_soup(&thin, &orig));
        Ok(thin.hits(&idx))
    })
    .unwrap();
    let exact = prob_avoid(&set, 0.8, &GreenTable::new(&spec1, &[]).unwrap()).unwrap();
    let (pa, se) = proportion(hits.iter().map(|h| !h));
    assert!(z(pa, se, exact).abs() < 4.0, "{pa} vs {exact}");
}

#[test]
fn thinning_rejects_impossible_targets() {
    let spec = LatticeSpec::new(2, 1, 0.0).unwrap();
    let s = sample_soup(&SoupParams::new(&spec, 1.0, RngStream::new(5, 0)).unwrap()).unwrap();
    assert!(thin_soup(&s, 2.0, 0.0, &RngStream::new(1, 1)).is_err());
    assert!(thin_soup(&s, 0.0, 0.0, &RngStream::new(1, 1)).is_err());
    let k = LatticeSpec::new(2, 1, 0.5).unwrap();
    let sk = sample_soup(&SoupParams::new(&k, 1.0, RngStream::new(5, 0)).unwrap()).unwrap();
    assert!(thin_soup(&sk, 0.5, 0.1, &RngStream::new(1, 1)).is_err());
}

#[test]
fn tampered_keep_probability_fails_the_determinant_oracle() {
    let spec = LatticeSpec::new(3, 1, 0.0).unwrap();
    let p = SoupParams::new(&spec, 1.0, RngStream::new(6, 0)).unwrap();
    let s = RngStream::new(6, 1);
    // Loops silently dropped with probability 0.3 while the oracle still
    // expects alpha = 1.
    let tampered = |r: u64| {
        let orig = sample_soup(&p.clone().with_stream(s.derive(r)))?;
        let mut t = thin_soup(&orig, 0.7, 0.0, &s.derive(r).derive(1))?;
        t.params.alpha = 1.0;
        Ok(t)
    };
    let (ok, _) = avoidance_check(&spec, 1.0, 20_000, &tampered).unwrap();
    assert!(!ok);
}

#[test]
fn cluster_sampler_agrees_with_full_soup() {
    let spec = LatticeSpec::new(2, 4, 0.0).unwrap();
    let p = SoupParams::new(&spec, 0.6, RngStream::new(7, 0)).unwrap();
    let o = Site::origin(2);
    let n = 20_000;
    let s = RngStream::new(7, 1);
    let full = replicate(n, |r| Ok(cluster_of(&sample_soup(&p.clone().with_stream(s.derive(r)))?, &o)?.size as f64)).unwrap();
    let t = RngStream::new(7, 2);
    let part = replicate(n, |r| {
        let c = sample_cluster(&p.clone().with_stream(t.derive(r)), &[o.clone()], Explore::Component)?;
        Ok(cluster_of(&c, &o)?.size as f64)
    })
    .unwrap();
    let stats = |xs: &[f64]| {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0);
        (m, v / xs.len() as f64)
    };
    let ((m1, v1), (m2, v2)) = (stats(&full), stats(&part));
    assert!((m1 - m2).abs() < 4.0 * (v1 + v2).sqrt(), "{m1} vs {m2}");
    let (e1, s1) = proportion(full.iter().map(|&x| x == 0.0));
    let (e2, s2) = proportion(part.iter().map(|&x| x == 0.0));
    assert!((e1 - e2).abs() < 4.0 * (s1 * s1 + s2 * s2).sqrt());
}

#[test]
fn sample_files_roundtrip() {
    let spec = LatticeSpec::new(3, 2, 0.0).unwrap();
    let s = sample_soup(&SoupParams::new(&spec, 1.0, RngStream::new(8, 0)).unwrap()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_sample(dir.path(), "soup", &s).unwrap();
    let back = read_sample(&dir.path().join("soup.loops"), &dir.path().join("soup.json")).unwrap();
    assert_eq!(back, s);

    std::fs::write(dir.path().join("bad.loops"), "2 0 7\n").unwrap();
    std::fs::copy(dir.path().join("soup.json"), dir.path().join("bad.json")).unwrap();
    assert!(read_sample(&dir.path().join("bad.loops"), &dir.path().join("bad.json")).is_err());
}
