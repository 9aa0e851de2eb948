"""Split-merge MCMC over partitions driven by sampled item pairs.

Each step draws a "chaperone" pair of items with probability proportional to
exp(-d_ij / tau), so nearby items are examined often. If the pair shares a
cluster, a split separating the two chaperones is proposed (remaining members
assigned to either side by fair coins); if they sit in different clusters,
a merge or a single-item reallocation between the two clusters is proposed.
Proposals are accepted by Metropolis-Hastings on the partition posterior, and
any proposal that would grow a cluster beyond the configured cap is rejected
outright, so the cap is an invariant of the chain. The pair distribution does
not depend on the state, which keeps the acceptance ratios exact.

Only within-cluster pair terms enter the acceptance ratio: the total
likelihood equals a partition-independent repulsion sum plus the sum of
per-pair log density ratios over within-cluster pairs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kmedoids import enforce_size_cap, kmedoids_init
from .model import (
    LikelihoodParams,
    Partition,
    PriorConfig,
    gamma_logpdf,
    pair_log_weights,
    size_log_pmf,
)

LOG2 = float(np.log(2.0))
MOVE_TYPES = ("split", "merge", "realloc")


@dataclass
class ChainState:
    labels: np.ndarray
    clusters: dict[int, list[int]]
    cohesion_sums: dict[int, float]  # per-cluster sum of within-pair log ratios
    next_cluster_id: int
    iteration: int
    rng: np.random.Generator

    @classmethod
    def from_partition(cls, partition: Partition, w: np.ndarray, rng: np.random.Generator) -> "ChainState":
        labels = partition.labels.copy()
        clusters = partition.clusters()
        sums = {
            lab: float(w[np.ix_(members, members)].sum() / 2.0)
            for lab, members in clusters.items()
        }
        return cls(
            labels=labels,
            clusters=clusters,
            cohesion_sums=sums,
            next_cluster_id=int(labels.max()) + 1,
            iteration=0,
            rng=rng,
        )

    def partition(self) -> Partition:
        return Partition(labels=self.labels.copy())

    def check_cache_consistency(self, w: np.ndarray, atol: float = 1e-8) -> None:
        """Debug check: cached cohesion sums must match the labels."""
        fresh = {
            lab: float(w[np.ix_(members, members)].sum() / 2.0)
            for lab, members in Partition(self.labels).clusters().items()
        }
        if set(fresh) != set(self.clusters):
            raise AssertionError("cluster bookkeeping out of sync with labels")
        for lab, val in fresh.items():
            if abs(val - self.cohesion_sums[lab]) > atol:
                raise AssertionError(f"cohesion cache stale for cluster {lab}")


@dataclass
class McmcSummary:
    k_trajectory: np.ndarray
    acceptance: dict[str, tuple[int, int]]  # move -> (accepted, proposed)
    n_retained: int
    log_posterior_trace: np.ndarray
    max_cluster_size_seen: int

    def acceptance_rates(self) -> dict[str, float]:
        return {
            move: (acc / prop if prop else float("nan"))
            for move, (acc, prop) in self.acceptance.items()
        }


@dataclass
class CoClusteringMatrix:
    """Posterior same-cluster probabilities, condensed upper triangle."""

    q: np.ndarray
    n: int

    def __post_init__(self):
        expected = self.n * (self.n - 1) // 2
        if self.q.shape != (expected,):
            raise ValueError(f"expected {expected} condensed entries, got {self.q.shape}")
        if expected and (self.q.min() < 0 or self.q.max() > 1):
            raise ValueError("co-clustering probabilities must lie in [0, 1]")

    def get(self, i: int, j: int) -> float:
        if i == j:
            return 1.0
        if i > j:
            i, j = j, i
        return float(self.q[i * (2 * self.n - i - 1) // 2 + (j - i - 1)])

    def square(self) -> np.ndarray:
        out = np.eye(self.n)
        iu, ju = np.triu_indices(self.n, 1)
        out[iu, ju] = self.q
        out[ju, iu] = self.q
        return out


class ChaperonesSampler:
    """Reusable stepper holding the per-dataset precomputation."""

    def __init__(
        self,
        dm,
        prior: PriorConfig,
        like: LikelihoodParams,
        seed: int | np.random.Generator = 0,
        init: Partition | None = None,
        merge_prob: float = 0.5,
    ):
        d = np.asarray(dm.d, dtype=np.float64)
        if not np.all(np.isfinite(d)):
            raise ValueError("distance matrix contains non-finite values")
        self.n = dm.n
        self.prior = prior
        self.like = like
        self.cap = prior.max_cluster_size
        self.merge_prob = merge_prob

        iu, ju = np.triu_indices(self.n, 1)
        self._iu, self._ju = iu, ju
        w_pairs = pair_log_weights(d, like)
        self.w = np.zeros((self.n, self.n))
        self.w[iu, ju] = w_pairs
        self.w[ju, iu] = w_pairs
        self.const_repulsion = float(
            gamma_logpdf(d, like.repulsion_shape, like.repulsion_rate).sum()
        )

        max_size = min(self.n, self.cap)
        pmf = np.full(max_size + 2, -np.inf)
        pmf[1 : max_size + 1] = size_log_pmf(np.arange(1, max_size + 1), prior)
        self.size_pmf = pmf

        tau = max(float(np.median(d)) / 3.0, 1e-6) if len(d) else 1.0
        weights = np.exp(-d / tau) if len(d) else np.array([1.0])
        cdf = np.cumsum(weights)
        cdf /= cdf[-1]
        cdf[-1] = 1.0
        self._pair_cdf = cdf

        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        if init is None:
            k = int(np.clip(round(self.n / prior.size_mean), 1, self.n))
            init = kmedoids_init(dm, k)
        init = enforce_size_cap(init, self.cap)
        if max(init.cluster_sizes()) > self.cap:
            raise ValueError("initial partition violates the cluster-size cap")
        self.state = ChainState.from_partition(init, self.w, rng)
        self.accepted = {m: 0 for m in MOVE_TYPES}
        self.proposed = {m: 0 for m in MOVE_TYPES}

    # -- posterior bookkeeping -------------------------------------------------

    def relative_log_posterior(self) -> float:
        """Log posterior up to the partition-independent repulsion constant."""
        sizes = [len(m) for m in self.state.clusters.values()]
        return float(self.size_pmf[sizes].sum()) + float(
            sum(self.state.cohesion_sums.values())
        )

    def log_posterior(self) -> float:
        return self.relative_log_posterior() + self.const_repulsion

    # -- moves -----------------------------------------------------------------

    def _cross_sum(self, members_a: list[int], members_b: list[int]) -> float:
        return float(self.w[np.ix_(members_a, members_b)].sum())

    def step(self) -> ChainState:
        st = self.state
        rng = st.rng
        if self.n < 2:
            st.iteration += 1
            return st
        k = int(np.searchsorted(self._pair_cdf, rng.random(), side="right"))
        i, j = int(self._iu[k]), int(self._ju[k])
        ci, cj = int(st.labels[i]), int(st.labels[j])

        if ci == cj:
            self._propose_split(i, j, ci)
        elif rng.random() < self.merge_prob:
            self._propose_merge(i, j, ci, cj)
        else:
            self._propose_realloc(i, j, ci, cj)
        st.iteration += 1
        return st

    def _propose_split(self, i: int, j: int, c: int) -> None:
        st = self.state
        members = st.clusters[c]
        s = len(members)
        self.proposed["split"] += 1
        others = [u for u in members if u != i and u != j]
        if others:
            coins = st.rng.random(len(others))
            group_i = [i] + [u for u, x in zip(others, coins) if x < 0.5]
            group_j = [j] + [u for u, x in zip(others, coins) if x >= 0.5]
        else:
            group_i, group_j = [i], [j]
        cross = self._cross_sum(group_i, group_j)
        delta = (
            self.size_pmf[len(group_i)]
            + self.size_pmf[len(group_j)]
            - self.size_pmf[s]
            - cross
        )
        # reverse move is the merge branch; forward assigned s-2 fair coins
        log_alpha = delta + np.log(self.merge_prob) + (s - 2) * LOG2
        if np.log(st.rng.random()) < log_alpha:
            self.accepted["split"] += 1
            new_id = st.next_cluster_id
            st.next_cluster_id += 1
            sum_i = self._cross_sum(group_i, group_i) / 2.0
            st.clusters[c] = group_i
            st.clusters[new_id] = group_j
            old_sum = st.cohesion_sums[c]
            st.cohesion_sums[c] = sum_i
            st.cohesion_sums[new_id] = old_sum - sum_i - cross
            for u in group_j:
                st.labels[u] = new_id

    def _propose_merge(self, i: int, j: int, ci: int, cj: int) -> None:
        st = self.state
        self.proposed["merge"] += 1
        members_i, members_j = st.clusters[ci], st.clusters[cj]
        s_new = len(members_i) + len(members_j)
        if s_new > self.cap:
            return  # hard constraint: reject outright
        cross = self._cross_sum(members_i, members_j)
        delta = (
            self.size_pmf[s_new]
            - self.size_pmf[len(members_i)]
            - self.size_pmf[len(members_j)]
            + cross
        )
        log_alpha = delta - (s_new - 2) * LOG2 - np.log(self.merge_prob)
        if np.log(st.rng.random()) < log_alpha:
            self.accepted["merge"] += 1
            for u in members_j:
                st.labels[u] = ci
            st.clusters[ci] = members_i + members_j
            st.cohesion_sums[ci] += st.cohesion_sums[cj] + cross
            del st.clusters[cj]
            del st.cohesion_sums[cj]

    def _propose_realloc(self, i: int, j: int, ci: int, cj: int) -> None:
        st = self.state
        self.proposed["realloc"] += 1
        pool = [u for u in st.clusters[ci] if u != i] + [u for u in st.clusters[cj] if u != j]
        if not pool:
            self.accepted["realloc"] += 1  # identity proposal, always accepted
            return
        u = pool[int(st.rng.integers(len(pool)))]
        src, dst = (ci, cj) if int(st.labels[u]) == ci else (cj, ci)
        dst_members = st.clusters[dst]
        if len(dst_members) + 1 > self.cap:
            return
        src_members = st.clusters[src]
        gain = float(self.w[u, dst_members].sum())
        loss = float(self.w[u, src_members].sum())  # w[u, u] = 0
        delta = (
            self.size_pmf[len(src_members) - 1]
            + self.size_pmf[len(dst_members) + 1]
            - self.size_pmf[len(src_members)]
            - self.size_pmf[len(dst_members)]
            + gain
            - loss
        )
        if np.log(st.rng.random()) < delta:  # symmetric proposal
            self.accepted["realloc"] += 1
            st.clusters[src] = [v for v in src_members if v != u]
            st.clusters[dst] = dst_members + [u]
            st.cohesion_sums[src] -= loss
            st.cohesion_sums[dst] += gain
            st.labels[u] = dst


def chaperones_step(
    state: ChainState,
    dm,
    prior: PriorConfig,
    like: LikelihoodParams,
    rng: np.random.Generator,
) -> ChainState:
    """Single transition of the chaperones chain (convenience wrapper).

    Builds the per-dataset tables on every call; use ChaperonesSampler
    directly for long runs.
    """
    sampler = ChaperonesSampler(dm, prior, like, seed=rng, init=state.partition())
    sampler.state = ChainState(
        labels=state.labels,
        clusters=state.clusters,
        cohesion_sums=state.cohesion_sums,
        next_cluster_id=state.next_cluster_id,
        iteration=state.iteration,
        rng=rng,
    )
    return sampler.step()


def run_mcmc(
    dm,
    prior: PriorConfig,
    like: LikelihoodParams,
    iters: int,
    burn_in: int,
    thin: int = 10,
    seed: int = 0,
    init: Partition | None = None,
) -> tuple[CoClusteringMatrix, McmcSummary]:
    """Run the chain and tally co-clustering frequencies over retained samples.

    Deterministic given the seed. Retains every ``thin``-th state after
    ``burn_in`` and reports the cluster-count trajectory, per-move acceptance
    rates, and a log-posterior trace at the retained states.
    """
    if iters <= burn_in:
        raise ValueError("iters must exceed burn_in")
    if thin < 1:
        raise ValueError("thin must be at least 1")
    n = dm.n
    if n == 1:
        return (
            CoClusteringMatrix(q=np.zeros(0), n=1),
            McmcSummary(
                k_trajectory=np.ones(iters, dtype=np.int32),
                acceptance={m: (0, 0) for m in MOVE_TYPES},
                n_retained=0,
                log_posterior_trace=np.zeros(0),
                max_cluster_size_seen=1,
            ),
        )

    sampler = ChaperonesSampler(dm, prior, like, seed=seed, init=init)
    iu, ju = np.triu_indices(n, 1)
    counts = np.zeros(len(iu), dtype=np.int64)
    k_traj = np.empty(iters, dtype=np.int32)
    logpost = []
    retained = 0
    max_size = int(max(len(m) for m in sampler.state.clusters.values()))
    for it in range(iters):
        sampler.step()
        k_traj[it] = len(sampler.state.clusters)
        size_now = max(len(m) for m in sampler.state.clusters.values())
        if size_now > max_size:
            max_size = size_now
        if it >= burn_in and (it - burn_in) % thin == 0:
            labels = sampler.state.labels
            counts += labels[iu] == labels[ju]
            retained += 1
            logpost.append(sampler.log_posterior())

    q = counts / retained if retained else np.zeros(len(iu))
    summary = McmcSummary(
        k_trajectory=k_traj,
        acceptance={m: (sampler.accepted[m], sampler.proposed[m]) for m in MOVE_TYPES},
        n_retained=retained,
        log_posterior_trace=np.asarray(logpost),
        max_cluster_size_seen=max_size,
    )
    return CoClusteringMatrix(q=q, n=n), summary
