import math

import numpy as np
import pytest

from brwlab import estimators as est
from brwlab.engine import SimSpec, run_bfs
from brwlab.errors import DomainError
from brwlab.martingales import (LevelQuery, RegionSpec, additive_W,
                                derivative_Z, deterministic_cap,
                                exact_second_moment_W, exact_second_moment_Z,
                                hit_event, level_count, restricted_Z,
                                shifted_Z, snapshot)
from brwlab.model import derive_params, varphi

LN2 = math.log(2.0)
P1 = derive_params(1.0)
R_INF = float("inf")


def _leaves(spec: SimSpec) -> np.ndarray:
    return run_bfs(spec)[-1].positions - spec.x


class TestHandValues:
    def test_additive_root(self):
        assert additive_W(np.array([0.0]), P1, 0) == 1.0

    def test_derivative_root(self):
        assert derivative_Z(np.array([0.0]), P1, 0) == 0.0

    def test_two_leaf_values(self):
        # hand evaluation of the definitions at increments (0.3, -0.2):
        # W = (e^{-0.2} + e^{-0.7})/2, Z = (0.7 e^{-0.2} + 1.2 e^{-0.7})/2
        leaves = np.array([0.3, -0.2])
        w_hand = (math.exp(-0.2) + math.exp(-0.7)) / 2.0
        z_hand = (0.7 * math.exp(-0.2) + 1.2 * math.exp(-0.7)) / 2.0
        assert additive_W(leaves, P1, 1) == pytest.approx(w_hand, rel=1e-12)
        assert derivative_Z(leaves, P1, 1) == pytest.approx(z_hand, rel=1e-12)
        assert additive_W(leaves, P1, 1) == pytest.approx(0.6576580, abs=1e-7)
        assert derivative_Z(leaves, P1, 1) == pytest.approx(0.5845069, abs=1e-7)
        zs = shifted_Z(leaves, P1, 1, 2.0)
        assert zs == pytest.approx(math.exp(2.0) * (z_hand - 2 * w_hand), rel=1e-10)
        assert zs == pytest.approx(-5.4000, abs=2e-4)

    def test_small_beta_limit(self):
        # at beta -> 0 the additive value is identically 1
        p = derive_params(1e-8)
        leaves = np.array([1.3, -0.4, 0.2, 2.0])
        assert additive_W(leaves, p, 2) == pytest.approx(1.0, abs=1e-7)

    def test_stream_validation(self):
        with pytest.raises(DomainError):
            additive_W(np.zeros(3), P1, 2)

    def test_overflow_guard(self):
        with pytest.raises(DomainError):
            additive_W(np.array([800.0, 0.0]), P1, 1)


class TestShiftIdentity:
    def test_x_zero_is_plain(self):
        leaves = _leaves(SimSpec(params=P1, n=6, seed=3))
        assert shifted_Z(leaves, P1, 6, 0.0) == pytest.approx(
            derivative_Z(leaves, P1, 6), rel=1e-12)

    def test_identity_and_ratio(self, rng):
        for _ in range(30):
            n = int(rng.integers(1, 9))
            x = float(rng.uniform(-3, 3))
            leaves = _leaves(SimSpec(params=P1, n=n, seed=int(rng.integers(1e9))))
            W = additive_W(leaves, P1, n)
            Z = derivative_Z(leaves, P1, n)
            direct = shifted_Z(leaves, P1, n, x)
            via = math.exp(P1.beta * x) * (Z - x * W)
            scale = math.exp(P1.beta * x) * (abs(Z) + abs(x) * W)
            assert abs(direct - via) <= 1e-12 * max(1.0, scale)
            # ratio identity: Z_shift / W_shift == Z/W - x
            w_shift = math.exp(P1.beta * x) * W
            assert direct / w_shift == pytest.approx(Z / W - x, rel=1e-9)


class TestRestricted:
    def test_full_line_and_empty(self):
        spec = SimSpec(params=P1, n=5, seed=8)
        leaves = _leaves(spec)
        full = restricted_Z(leaves, P1, 5, 0.5, [(-R_INF, R_INF)])
        assert full == pytest.approx(shifted_Z(leaves, P1, 5, 0.5), rel=1e-12)
        assert restricted_Z(leaves, P1, 5, 0.5, []) == 0.0

    def test_partition_additivity(self):
        spec = SimSpec(params=P1, n=7, seed=13)
        leaves = _leaves(spec)
        cut = float(np.median(leaves))
        left = restricted_Z(leaves, P1, 7, -1.0, [(-R_INF, cut)])
        right = restricted_Z(leaves, P1, 7, -1.0, [(cut, R_INF)])
        total = shifted_Z(leaves, P1, 7, -1.0)
        assert left + right == pytest.approx(total, rel=1e-12)


class TestLevelCount:
    def test_whole_line(self):
        leaves = _leaves(SimSpec(params=P1, n=6, seed=2))
        assert level_count(leaves, 6, LevelQuery(-R_INF, R_INF)) == 64

    def test_partition_sums(self):
        leaves = _leaves(SimSpec(params=P1, n=8, seed=5))
        cuts = [-R_INF, -2.0, 0.0, 1.5, R_INF]
        total = sum(level_count(leaves, 8, LevelQuery(a, b))
                    for a, b in zip(cuts[:-1], cuts[1:]))
        assert total == 256

    def test_shift_covariance(self):
        leaves = _leaves(SimSpec(params=P1, n=7, seed=9))
        a, b, x = -1.0, 2.0, 0.8
        assert (level_count(leaves, 7, LevelQuery(a, b, x=x))
                == level_count(leaves, 7, LevelQuery(a - x, b - x)))

    def test_interval_validation(self):
        with pytest.raises(DomainError):
            LevelQuery(2.0, 1.0)


class TestHitEvent:
    def test_root_always_hits_at_its_own_level(self):
        spec = SimSpec(params=P1, n=6, x=1.2, seed=4)
        hit, witness = hit_event(spec, RegionSpec(n=6, L=1.2, M=6 * LN2, x=1.2))
        assert hit and witness == (0, 1.2)

    def test_impossible_threshold(self):
        spec = SimSpec(params=P1, n=5, seed=4)
        hit, witness = hit_event(spec, RegionSpec(n=5, L=0.0, M=5 * LN2 + 0.1))
        assert not hit and witness is None

    def test_matches_bruteforce_on_dumped_trees(self, rng):
        for _ in range(15):
            n = 8
            seed = int(rng.integers(1e9))
            L = float(rng.uniform(-4, 8))
            M = float(rng.uniform(0.5, n * LN2))
            spec = SimSpec(params=P1, n=n, seed=seed)
            gens = run_bfs(spec)
            brute = False
            for d in range(0, n):  # depth-n nodes excluded (t >= 1)
                lam = L - gens[d].positions
                if (varphi(n - d, lam) >= M).any():
                    brute = True
                    break
            hit, _ = hit_event(spec, RegionSpec(n=n, L=L, M=M))
            assert hit == brute

    def test_witness_is_first_in_preorder(self):
        spec = SimSpec(params=P1, n=6, seed=77)
        region = RegionSpec(n=6, L=2.0, M=1.0)
        hit, witness = hit_event(spec, region)
        if hit:
            depth, pos = witness
            assert varphi(6 - depth, region.L - pos) >= region.M


class TestSecondMomentOracles:
    def test_base_cases(self):
        assert exact_second_moment_W(P1, 0) == 1.0
        assert exact_second_moment_Z(P1, 0) == 0.0

    def test_half_beta_one_generation(self):
        p = derive_params(0.5)
        assert exact_second_moment_W(p, 1) == pytest.approx(1.1420127, abs=5e-8)
        assert exact_second_moment_Z(p, 1) == pytest.approx(0.8025159, abs=5e-8)

    def test_small_beta_limits(self):
        # beta -> 0: E W_n^2 -> 1 and E Z_1^2 -> 1/2
        p = derive_params(1e-9)
        for n in range(1, 8):
            assert exact_second_moment_W(p, n) == pytest.approx(1.0, abs=1e-8)
        assert exact_second_moment_Z(p, 1) == pytest.approx(0.5, abs=1e-8)

    def test_against_independent_monte_carlo(self, rng):
        # oracle vs a numpy-sampled tree, fully outside the package RNG
        beta, n, reps = 0.5, 5, 40_000
        p = derive_params(beta)
        xi = rng.standard_normal((reps, 2 ** (n + 1) - 2))
        w2 = np.empty(reps)
        z2 = np.empty(reps)
        for r in range(reps):
            pos = np.zeros(1)
            k = 0
            for d in range(1, n + 1):
                pos = np.repeat(pos, 2) + xi[r, k:k + 2 ** d]
                k += 2 ** d
            terms = np.exp(beta * pos - n * (0.5 * beta ** 2 + LN2))
            w2[r] = terms.sum() ** 2
            z2[r] = ((beta * n - pos) * terms).sum() ** 2
        for emp, exact in ((w2, exact_second_moment_W(p, n)),
                           (z2, exact_second_moment_Z(p, n))):
            se = emp.std(ddof=1) / math.sqrt(reps)
            assert abs(emp.mean() - exact) < 3 * se


class TestPerRealizationLaws:
    def test_deterministic_cap(self, rng):
        for _ in range(40):
            n = int(rng.integers(1, 10))
            leaves = _leaves(SimSpec(params=P1, n=n, seed=int(rng.integers(1e9))))
            assert derivative_Z(leaves, P1, n) <= deterministic_cap(P1, n) + 1e-12

    def test_one_step_recursion(self, rng):
        # shifted value at n+1 equals q times the two depth-1 subtree values
        for _ in range(25):
            n = int(rng.integers(1, 8))
            x = float(rng.uniform(-2, 2))
            seed = int(rng.integers(1e9))
            gens = run_bfs(SimSpec(params=P1, n=n + 1, seed=seed))
            leaves = gens[-1].positions
            xi1, xi2 = gens[1].positions
            half = leaves.size // 2
            lhs = shifted_Z(leaves, P1, n + 1, x)
            sub1 = shifted_Z(leaves[:half] - xi1, P1, n, x + xi1 - P1.beta)
            sub2 = shifted_Z(leaves[half:] - xi2, P1, n, x + xi2 - P1.beta)
            rhs = P1.q * (sub1 + sub2)
            scale = max(abs(lhs), abs(rhs), P1.q * (abs(sub1) + abs(sub2)), 1e-3)
            assert abs(lhs - rhs) <= 1e-10 * scale
            # positive parts are subadditive along the same recursion
            assert max(lhs, 0.0) <= P1.q * (max(sub1, 0.0) + max(sub2, 0.0)) + 1e-10 * scale

    def test_generation_decomposition(self, rng):
        for _ in range(20):
            n = int(rng.integers(3, 9))
            m = int(rng.integers(1, n))
            seed = int(rng.integers(1e9))
            gens = run_bfs(SimSpec(params=P1, n=n, seed=seed))
            leaves = gens[-1].positions
            mids = gens[m].positions
            lhs = derivative_Z(leaves, P1, n)
            rhs = 0.0
            block = 2 ** (n - m)
            for i, s_u in enumerate(mids):
                sub = leaves[i * block:(i + 1) * block] - s_u
                wu = additive_W(sub, P1, n - m)
                zu = derivative_Z(sub, P1, n - m)
                rhs += (math.exp(P1.beta * s_u - 0.5 * P1.beta ** 2 * m) / 2 ** m
                        * (zu + (P1.beta * m - s_u) * wu))
            assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs), abs(rhs))

    def test_martingale_means(self):
        # E W = 1 and E Z = 0 within 3 standard errors at n = 10
        p = derive_params(0.6)
        cfg = est.CampaignConfig(params=p, horizon=10, replicates=10_000, seed=123)
        ss = est.run_campaign(cfg, threads=2)
        W, Z = ss.column(10)
        for arr, target in ((W, 1.0), (Z, 0.0)):
            se = arr.std(ddof=1) / math.sqrt(arr.size)
            assert abs(arr.mean() - target) < 3 * se


class TestSnapshot:
    def test_fields(self):
        spec = SimSpec(params=P1, n=4, x=1.0, seed=6)
        leaves = _leaves(spec)
        snap = snapshot(leaves, P1, 4, x=1.0)
        assert snap.W == pytest.approx(additive_W(leaves, P1, 4))
        assert snap.Z == pytest.approx(derivative_Z(leaves, P1, 4))
        assert "Z_shifted" in snap.extras
