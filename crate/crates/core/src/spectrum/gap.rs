use serde::Serialize;

use super::SpectrumResult;

/// Every inequality of the spectral-gap hypotheses, with margins
/// `lhs - rhs` (positive means satisfied).
#[derive(Clone, Debug, Serialize)]
pub struct GapReport {
    pub k: usize,
    pub r: usize,
    pub hyperbolic: bool,
    /// `k = 0` or `k = r`: only one side of the unit circle is populated.
    pub one_sided: bool,
    /// `a_{k+1} / b_k > max{b_r, 1 / a_1}`.
    pub gb_main: bool,
    pub gb_main_margin: Option<f64>,
    /// `b_i / a_i < 1 / b_k` for `i <= k`.
    pub gb_contract: Vec<bool>,
    pub gb_contract_margins: Vec<f64>,
    /// `b_j / a_j < a_{k+1}` for `j > k`.
    pub gb_expand: Vec<bool>,
    pub gb_expand_margins: Vec<f64>,
    /// `b_k b_r < a_{k+1}`.
    pub nr22: bool,
    pub nr22_margin: Option<f64>,
    /// `a_1 a_{k+1} > b_k`.
    pub unstable_fd: bool,
    pub unstable_fd_margin: Option<f64>,
    /// Conjunction of the `gb_*` inequalities on a hyperbolic spectrum.
    pub all_pass: bool,
    pub notices: Vec<String>,
}

/// Evaluates the gap inequalities on the interval endpoints. Inequalities
/// that need an absent side are reported vacuous-true with a notice.
pub fn check_gap_condition(spec: &SpectrumResult) -> GapReport {
    let iv = &spec.intervals;
    let r = iv.len();
    let k = spec.k;
    let mut notices = Vec::new();
    let one_sided = k == 0 || k == r;
    if !spec.hyperbolic {
        notices.push("spectrum meets the unit circle: the gap theorem does not apply".to_string());
    }
    if one_sided {
        notices.push(format!(
            "one-sided spectrum (k = {k}, r = {r}): inequalities involving the missing side are vacuous"
        ));
    }
    let a = |i: usize| iv[i - 1].a;
    let b = |i: usize| iv[i - 1].b;
    let both = k >= 1 && k < r;

    let (gb_main, gb_main_margin) = if both {
        let lhs = a(k + 1) / b(k);
        let rhs = b(r).max(1.0 / a(1));
        (lhs > rhs, Some(lhs - rhs))
    } else {
        (true, None)
    };
    let mut gb_contract = Vec::new();
    let mut gb_contract_margins = Vec::new();
    if k >= 1 {
        for i in 1..=k {
            let margin = 1.0 / b(k) - b(i) / a(i);
            gb_contract.push(margin > 0.0);
            gb_contract_margins.push(margin);
        }
    }
    let mut gb_expand = Vec::new();
    let mut gb_expand_margins = Vec::new();
    if k < r {
        for j in (k + 1)..=r {
            let margin = a(k + 1) - b(j) / a(j);
            gb_expand.push(margin > 0.0);
            gb_expand_margins.push(margin);
        }
    }
    let (nr22, nr22_margin) = if both {
        let margin = a(k + 1) - b(k) * b(r);
        (margin > 0.0, Some(margin))
    } else {
        (true, None)
    };
    let (unstable_fd, unstable_fd_margin) = if both {
        let margin = a(1) * a(k + 1) - b(k);
        (margin > 0.0, Some(margin))
    } else {
        (true, None)
    };
    let all_pass = spec.hyperbolic
        && r > 0
        && gb_main
        && gb_contract.iter().all(|&x| x)
        && gb_expand.iter().all(|&x| x);
    GapReport {
        k,
        r,
        hyperbolic: spec.hyperbolic,
        one_sided,
        gb_main,
        gb_main_margin,
        gb_contract,
        gb_contract_margins,
        gb_expand,
        gb_expand_margins,
        nr22,
        nr22_margin,
        unstable_fd,
        unstable_fd_margin,
        all_pass,
        notices,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(iv: &[(f64, f64)]) -> SpectrumResult {
        let with_dims: Vec<(f64, f64, usize)> = iv.iter().map(|&(a, b)| (a, b, 1)).collect();
        SpectrumResult::from_intervals(&with_dims).unwrap()
    }

    #[test]
    fn point_spectrum_passes() {
        let g = check_gap_condition(&spec(&[(0.5, 0.5), (3.0, 3.0)]));
        // 3 / 0.5 = 6 > max(3, 2) = 3.
        assert!(g.gb_main);
        assert_eq!(g.gb_main_margin, Some(3.0));
        assert!(g.all_pass);
        // 0.5 * 3 = 1.5 < 3.
        assert!(g.nr22);
        assert!(g.unstable_fd);
    }

    #[test]
    fn wide_intervals_fail_main_condition() {
        let g = check_gap_condition(&spec(&[(0.4, 0.9), (1.2, 1.3)]));
        // 1.2 / 0.9 = 1.333 < max(1.3, 2.5) = 2.5.
        assert!(!g.gb_main);
        assert!(!g.all_pass);
    }

    #[test]
    fn contraction_only_is_one_sided() {
        let g = check_gap_condition(&spec(&[(0.2, 0.3), (0.5, 0.6)]));
        assert!(g.one_sided);
        assert!(g.gb_main_margin.is_none());
        assert!(!g.notices.is_empty());
    }

    #[test]
    fn passing_contrast_cases() {
        assert!(check_gap_condition(&spec(&[(0.5, 0.5), (2.4, 2.4)])).all_pass);
        assert!(check_gap_condition(&spec(&[(0.05, 0.05), (3.0, 3.0)])).all_pass);
    }
}
