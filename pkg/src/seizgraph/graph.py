"""EEG graph construction and the operators consumed by graph convolutions.

Two graph families: a fixed undirected distance graph over electrode
positions (thresholded Gaussian kernel, or a fixed-bandwidth Gaussian
variant), and a per-clip directed correlation graph that keeps each node's
top-tau absolute normalized cross-correlations.
"""

from dataclasses import dataclass

import numpy as np
from scipy.fft import next_fast_len

from .electrodes import ElectrodeLayout

DEFAULT_KAPPA = 0.9
DEFAULT_TAU = 3
DEFAULT_BANDWIDTH = 0.06


class GraphError(ValueError):
    pass


@dataclass
class EegGraph:
    """Weighted adjacency over the electrode set."""

    weights: np.ndarray  # (n, n), nonnegative
    directed: bool

    @property
    def n_nodes(self) -> int:
        return self.weights.shape[0]

    def validate(self) -> None:
        w = self.weights
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise GraphError(f"adjacency must be square, got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise GraphError("adjacency contains non-finite weights")
        if np.any(w < 0):
            raise GraphError("adjacency weights must be nonnegative")
        if np.any(np.diag(w) <= 0):
            raise GraphError("self-edges must be present (positive diagonal)")
        if not self.directed and not np.allclose(w, w.T, atol=1e-12, rtol=0):
            raise GraphError("undirected graph has an asymmetric adjacency")


@dataclass
class GraphOperators:
    """Random-walk transition matrices and (undirected only) Laplacians."""

    out_transition: np.ndarray  # row-stochastic
    in_transition: np.ndarray  # row-stochastic
    laplacian: np.ndarray | None = None
    scaled_laplacian: np.ndarray | None = None
    lambda_max: float | None = None


def build_distance_graph(layout: ElectrodeLayout, kappa: float = DEFAULT_KAPPA) -> EegGraph:
    """Thresholded Gaussian kernel on pairwise electrode distances.

    Weight exp(-d^2 / sigma^2) for pairs with d <= kappa, zero beyond; sigma
    is the population standard deviation of the distinct pairwise distances.
    Self-distances are zero, so self-edges carry weight one.
    """
    if kappa <= 0:
        raise GraphError("kappa must be positive")
    dist = layout.pairwise_distances()
    iu = np.triu_indices(layout.n_electrodes, k=1)
    sigma = float(np.std(dist[iu]))
    weights = np.exp(-(dist**2) / sigma**2)
    weights[dist > kappa] = 0.0
    graph = EegGraph(weights=weights, directed=False)
    graph.validate()
    return graph


def build_distance_graph_bandwidth(
    layout: ElectrodeLayout, bandwidth: float = DEFAULT_BANDWIDTH
) -> EegGraph:
    """Dense Gaussian-kernel graph with a fixed bandwidth (no threshold)."""
    if bandwidth <= 0:
        raise GraphError("bandwidth must be positive")
    dist = layout.pairwise_distances()
    prefactor = 1.0 / np.sqrt(2.0 * np.pi * bandwidth**2)
    weights = prefactor * np.exp(-(dist**2) / (2.0 * bandwidth**2))
    graph = EegGraph(weights=weights, directed=False)
    graph.validate()
    return graph


def cross_correlation_matrix(
    signals: np.ndarray, zero_lag_only: bool = False
) -> np.ndarray:
    """Pairwise max-over-lags absolute normalized cross-correlation.

    ``signals`` is (n_channels, length); entry (i, j) is
    max_lag |sum_n x_i[n+lag] x_j[n]| / (||x_i|| ||x_j||), computed over all
    integer lags via FFT (or the zero lag only).  Channels with zero norm
    correlate to zero by definition.
    """
    signals = np.asarray(signals, dtype=np.float64)
    n, length = signals.shape
    norms = np.linalg.norm(signals, axis=1)
    if zero_lag_only:
        best = np.abs(signals @ signals.T)
    else:
        nfft = next_fast_len(2 * length - 1)
        spectra = np.fft.rfft(signals, nfft, axis=1)
        cross = spectra[:, None, :] * np.conj(spectra[None, :, :])
        corr = np.fft.irfft(cross, nfft, axis=-1)
        best = np.abs(corr).max(axis=-1)
    denom = np.outer(norms, norms)
    out = np.zeros((n, n))
    nonzero = denom > 0
    out[nonzero] = best[nonzero] / denom[nonzero]
    return out


def build_correlation_graph(
    features: np.ndarray,
    valid_len: int | None = None,
    tau: int = DEFAULT_TAU,
    zero_lag_only: bool = False,
) -> EegGraph:
    """Directed top-tau correlation graph over a clip's channels.

    ``features`` is the (T, N, M) clip tensor; each channel's valid T x M
    block is flattened into one signal vector.  Row i keeps node i's tau
    strongest out-edges (ties broken toward the lower node index); all
    self-edges are forced to weight one.
    """
    if tau < 1:
        raise GraphError("tau must be at least 1")
    features = np.asarray(features, dtype=np.float64)
    if valid_len is None:
        valid_len = features.shape[0]
    n = features.shape[1]
    signals = features[:valid_len].transpose(1, 0, 2).reshape(n, -1)
    corr = cross_correlation_matrix(signals, zero_lag_only=zero_lag_only)

    weights = np.zeros((n, n))
    keep = min(tau, n - 1)
    for i in range(n):
        candidates = [j for j in range(n) if j != i]
        # sort by descending weight, then ascending index for deterministic ties
        candidates.sort(key=lambda j: (-corr[i, j], j))
        for j in candidates[:keep]:
            weights[i, j] = corr[i, j]
    np.fill_diagonal(weights, 1.0)
    graph = EegGraph(weights=weights, directed=True)
    graph.validate()
    return graph


def graph_operators(graph: EegGraph) -> GraphOperators:
    """Derive transition matrices and, for undirected graphs, Laplacians.

    With n <= 19 nodes the maximum Laplacian eigenvalue comes from a dense
    symmetric eigensolve rather than the usual lambda_max ~ 2 shortcut.
    """
    graph.validate()
    w = graph.weights
    d_out = w.sum(axis=1)
    d_in = w.sum(axis=0)
    if np.any(d_out <= 0) or np.any(d_in <= 0):
        raise GraphError("isolated node: zero degree cannot be normalized")
    out_transition = w / d_out[:, None]
    in_transition = w.T / d_in[:, None]
    if graph.directed:
        return GraphOperators(out_transition=out_transition, in_transition=in_transition)

    d_inv_sqrt = 1.0 / np.sqrt(d_out)
    laplacian = np.diag(np.ones_like(d_out)) - (d_inv_sqrt[:, None] * w * d_inv_sqrt[None, :])
    laplacian = 0.5 * (laplacian + laplacian.T)  # enforce exact symmetry
    lambda_max = float(np.linalg.eigvalsh(laplacian)[-1])
    if lambda_max <= 1e-12:
        scaled = -np.eye(w.shape[0])  # L == 0 limit
        lambda_max = 0.0
    else:
        scaled = (2.0 / lambda_max) * laplacian - np.eye(w.shape[0])
    return GraphOperators(
        out_transition=out_transition,
        in_transition=in_transition,
        laplacian=laplacian,
        scaled_laplacian=scaled,
        lambda_max=lambda_max,
    )
