"""Key-consistency estimation, key-space accounting and the distinguishing game."""

from __future__ import annotations

import csv
import io
import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Literal, Sequence

import numpy as np

from .channel import ChannelParams, distort_detections, make_rng, profile_from_snr
from .errors import ConfigurationError, InputDomainError
from .keychain import KdfParams, SessionKey, derive_session_key
from .protocol import run_session
from .sakp import GridSpec, SakpConfig, canonical_digest, frame_from_json, frame_to_json
from .scene import SceneConfig, generate_frame, generate_scene
from .secure_channel import AuthFailure, decode_wire, decrypt_payload, encode_wire, encrypt_payload

SECURITY_BITS = 128
CSV_COLUMNS = ("snr_db", "K", "T", "Q", "mode", "runs", "mcr_skg", "stderr", "log2_space", "secure")


# -- key space ---------------------------------------------------------------

@dataclass(frozen=True)
class KeyspaceReport:
    num_classes: int
    grids: int
    top_k: int
    window: int
    log2_space: float
    secure: bool
    exact_log2: float | None = None

    def summary(self) -> str:
        return f"{self.log2_space:.2f} bits, {'SECURE' if self.secure else 'INSECURE'}"


def _log2_fraction(x: Fraction) -> float:
    # log2 of a big rational without float overflow: shift both parts to 53-bit mantissas
    def log2_int(n: int) -> float:
        shift = max(n.bit_length() - 64, 0)
        return math.log2(n >> shift) + shift
    return log2_int(x.numerator) - log2_int(x.denominator)


def keyspace_log2(num_classes: int, grids: int, top_k: int, window: int) -> KeyspaceReport:
    """Semantic key space ``(N*Q)**(K*T) / K!`` in bits.

    Evaluated as ``K*T*log2(N*Q) - log2(K!)`` with ``lgamma`` for the
    factorial; small spaces (at most 64 bits before the division) are
    also evaluated exactly and reported in ``exact_log2``.
    """
    for name, v in (("N", num_classes), ("Q", grids), ("K", top_k), ("T", window)):
        if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 1:
            raise InputDomainError(f"{name} must be a positive integer, got {v!r}")
    if num_classes < 2:
        raise InputDomainError("N must be >= 2")
    raw_bits = top_k * window * math.log2(num_classes * grids)
    bits = raw_bits - math.lgamma(top_k + 1) / math.log(2)
    exact = None
    if raw_bits <= 64:
        exact = _log2_fraction(Fraction((num_classes * grids) ** (top_k * window), math.factorial(top_k)))
    return KeyspaceReport(num_classes, grids, top_k, window, bits, bits > SECURITY_BITS, exact)


# -- MCR-SKG -----------------------------------------------------------------

@dataclass(frozen=True)
class McrSkgConfig:
    mode: Literal["independent", "chained"] = "independent"
    runs: int = 100
    frames_per_run: int = 50
    snr_db: Sequence[float] = (5.0, 10.0, 25.0)
    top_k: Sequence[int] = (1, 3, 5, 10)
    window: Sequence[int] = (1, 3, 5)
    grids: Sequence[int] = (900,)
    num_classes: int = 80
    policy: str = "none"

    def __post_init__(self):
        if self.mode not in ("independent", "chained"):
            raise ConfigurationError(f"unknown mode {self.mode!r}")
        if self.runs < 1 or self.frames_per_run < 2:
            raise ConfigurationError("need runs >= 1 and frames_per_run >= 2")
        for name in ("snr_db", "top_k", "window", "grids"):
            if not getattr(self, name):
                raise ConfigurationError(f"sweep axis {name} is empty")

    def grid_points(self):
        return list(itertools.product(self.snr_db, self.top_k, self.window, self.grids))


@dataclass
class McrRow:
    snr_db: float
    K: int
    T: int
    Q: int
    mode: str
    runs: int
    mcr_skg: float
    stderr: float
    log2_space: float
    secure: bool
    frames_per_run: int = 0
    comparisons: int = 0
    mcr_session: float = 0.0
    profile: dict = field(default_factory=dict)

    def ci95(self) -> tuple[float, float]:
        return self.mcr_skg - 1.96 * self.stderr, self.mcr_skg + 1.96 * self.stderr

    def csv_record(self) -> list:
        return [self.snr_db, self.K, self.T, self.Q, self.mode, self.runs,
                f"{self.mcr_skg:.6f}", f"{self.stderr:.6f}", f"{self.log2_space:.4f}",
                int(self.secure)]


def run_channel_seed(seed: int, run: int) -> int:
    return int(make_rng((seed, run, 0x434831)).integers(2**63))


def _summarise(per_run: np.ndarray) -> tuple[float, float, float]:
    """(mean, standard error, session-level rate) from an (R, L-1) indicator matrix.

    The standard error is taken over per-run means: comparisons inside a run
    share window entries and are not independent.
    """
    run_means = per_run.mean(axis=1)
    r = len(run_means)
    se = float(run_means.std(ddof=1) / math.sqrt(r)) if r > 1 else 0.0
    return float(per_run.mean()), se, float(per_run.all(axis=1).mean())


def _window_matches(frame_match: np.ndarray, window: int) -> np.ndarray:
    """Key match for k_2..k_L given per-frame digest matches of frames 1..L-1.

    k_{j+1} is derived from the digests of frames max(1, j-T+1)..j, so it
    matches iff every one of those frames matched.
    """
    runs, n = frame_match.shape
    out = np.empty((runs, n - 1), dtype=bool)
    for j in range(1, n):
        out[:, j - 1] = frame_match[:, max(0, j - window):j].all(axis=1)
    return out


def _independent_snr(args):
    snr, cfg, base_channel, scene, kdf, seed, derive_keys = args
    channel = replace(base_channel, snr_db=snr)
    profile = profile_from_snr(channel)
    L = cfg.frames_per_run
    # source and reconstruction are drawn once per (run, frame) and shared by every
    # (K, T, Q) point, so the sweep compares configurations on common random numbers
    pairs = []
    for run in range(cfg.runs):
        ch_seed = run_channel_seed(seed, run)
        frames = list(generate_scene(L, (seed, run, 1), scene))
        pairs.append([(f, distort_detections(f, profile, (ch_seed, f.frame_index), cfg.num_classes))
                      for f in frames])
    rows = []
    for K, Q in itertools.product(cfg.top_k, cfg.grids):
        sakp = SakpConfig(top_k=K, grid=GridSpec.from_cells(Q), num_classes=cfg.num_classes)
        digests = [[(canonical_digest(s, sakp).data, canonical_digest(r, sakp).data) for s, r in run]
                   for run in pairs]
        frame_match = np.array([[a == b for a, b in run] for run in digests])
        for T in cfg.window:
            if derive_keys:
                per_run = np.array([_derived_key_matches(run, T, kdf) for run in digests])
            else:
                per_run = _window_matches(frame_match, T)
            mean, se, sess = _summarise(per_run)
            ks = keyspace_log2(cfg.num_classes, Q, K, T)
            rows.append(McrRow(float(snr), K, T, Q, "independent", cfg.runs, mean, se, ks.log2_space, ks.secure,
                               L, per_run.size, sess, vars(profile)))
    return rows


def _derived_key_matches(digests: list[tuple[bytes, bytes]], window: int, kdf: KdfParams) -> list[bool]:
    out = []
    for j in range(1, len(digests)):
        hist = digests[max(0, j - window):j]
        ks = derive_session_key([s for s, _ in hist], j + 1, kdf)
        kr = derive_session_key([r for _, r in hist], j + 1, kdf)
        out.append(ks.key_bytes == kr.key_bytes)
    return out


def _chained_point(args):
    snr, K, T, Q, cfg, base_channel, scene, kdf, seed = args
    sakp = SakpConfig(top_k=K, grid=GridSpec.from_cells(Q), num_classes=cfg.num_classes, window=T)
    per_run = []
    for run in range(cfg.runs):
        channel = replace(base_channel, snr_db=snr, seed=run_channel_seed(seed, run))
        source = generate_scene(cfg.frames_per_run, (seed, run, 1), scene)
        trace = run_session(cfg.frames_per_run, source, channel, sakp, kdf, cfg.policy,
                            seed=int(make_rng((seed, run, 2)).integers(2**63)))
        per_run.append([s.key_match for s in trace.steps[1:]])
    per_run = np.array(per_run)
    mean, se, sess = _summarise(per_run)
    ks = keyspace_log2(cfg.num_classes, Q, K, T)
    return McrRow(float(snr), K, T, Q, "chained", cfg.runs, mean, se, ks.log2_space, ks.secure,
                  cfg.frames_per_run, per_run.size, sess,
                  vars(profile_from_snr(replace(base_channel, snr_db=snr))))


def estimate_mcr_skg(cfg: McrSkgConfig, channel: ChannelParams = ChannelParams(),
                     scene: SceneConfig | None = None, kdf: KdfParams = KdfParams(), seed: int = 0,
                     derive_keys: bool = False, workers: int = 1) -> list[McrRow]:
    """Estimate MCR-SKG at every point of the sweep.

    Independent mode compares the keys both ends would derive from their own
    view of the last T frames, with every frame delivered intact; by default
    the comparison is done on the digest windows, which is equivalent to
    comparing the PBKDF2 outputs (pass ``derive_keys=True`` to run the KDF).
    Chained mode runs the full protocol, so one mismatch can poison every
    later key.  Rows come back ordered by (snr, K, T, Q).
    """
    scene = scene or SceneConfig(num_classes=cfg.num_classes)
    if cfg.mode == "independent":
        jobs = [(snr, cfg, channel, scene, kdf, seed, derive_keys) for snr in cfg.snr_db]
        fn = _independent_snr
    else:
        jobs = [(snr, K, T, Q, cfg, channel, scene, kdf, seed) for snr, K, T, Q in cfg.grid_points()]
        fn = _chained_point
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(fn, jobs))
    else:
        results = [fn(j) for j in jobs]
    rows = [r for res in results for r in (res if isinstance(res, list) else [res])]
    rows.sort(key=lambda r: (cfg.snr_db.index(r.snr_db), cfg.top_k.index(r.K),
                             cfg.window.index(r.T), cfg.grids.index(r.Q)))
    return rows


def best_secure(rows: Sequence[McrRow]) -> McrRow | None:
    """Highest-MCR row among those whose key space clears 128 bits."""
    secure = [r for r in rows if r.secure]
    return max(secure, key=lambda r: r.mcr_skg) if secure else None


def rows_to_csv(rows: Sequence[McrRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow(r.csv_record())
    return buf.getvalue()


# -- distinguishing game -----------------------------------------------------

@dataclass(frozen=True)
class GameConfig:
    trials: int = 10_000
    adversary: str = "random"
    epsilon_threshold: float = 0.05

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigurationError("trials must be >= 1")
        if not 0 < self.epsilon_threshold < 1:
            raise ConfigurationError("epsilon_threshold must lie in (0, 1)")
        if self.adversary not in ADVERSARIES:
            raise ConfigurationError(f"unknown adversary {self.adversary!r}; "
                                     f"choose from {sorted(ADVERSARIES)}")


@dataclass(frozen=True)
class GameResult:
    adversary: str
    trials: int
    wins: int
    rejected: int
    advantage: float
    ci_low: float
    ci_high: float
    epsilon_threshold: float

    @property
    def within_threshold(self) -> bool:
        return abs(self.advantage) <= self.epsilon_threshold


class Adversary:
    """Eavesdropper strategy: choose two plaintexts, then guess which was encrypted."""

    sees_key = False

    def __init__(self, rng: np.random.Generator, scene: SceneConfig = SceneConfig()):
        self.rng = rng
        self.scene = scene

    def challenge(self) -> tuple[bytes, bytes]:
        a = frame_to_json(generate_frame(self.rng, 0, self.scene)).encode()
        b = frame_to_json(generate_frame(self.rng, 0, self.scene)).encode()
        n = max(len(a), len(b))
        # trailing spaces keep both plaintexts valid JSON at equal length
        return a.ljust(n), b.ljust(n)

    def guess(self, wire: bytes, s0: bytes, s1: bytes, key: SessionKey | None = None) -> int:
        raise NotImplementedError


class RandomGuess(Adversary):
    def guess(self, wire, s0, s1, key=None):
        return int(self.rng.integers(2))


class ConstantGuess(Adversary):
    def guess(self, wire, s0, s1, key=None):
        return 0


class DecodeWithoutKey(Adversary):
    """Treats the ciphertext as if it were the plaintext stream.

    First tries to parse it as a detection record; failing that, scores each
    candidate by byte agreement with the ciphertext body.
    """

    def guess(self, wire, s0, s1, key=None):
        body = wire[17:-16]
        try:
            frame = frame_from_json(body)
            for bit, s in enumerate((s0, s1)):
                if frame == frame_from_json(s):
                    return bit
        except Exception:
            pass
        c = np.frombuffer(body, dtype=np.uint8)
        score0 = int(np.count_nonzero(c == np.frombuffer(s0, dtype=np.uint8)))
        score1 = int(np.count_nonzero(c == np.frombuffer(s1, dtype=np.uint8)))
        if score0 == score1:
            return int(self.rng.integers(2))
        return int(score1 > score0)


class OracleLeak(Adversary):
    """Upper-bound sanity check: this adversary is handed the key."""

    sees_key = True

    def guess(self, wire, s0, s1, key=None):
        try:
            plain = decrypt_payload(decode_wire(wire), key)
        except AuthFailure:
            return int(self.rng.integers(2))
        return int(plain == s1)


ADVERSARIES: dict[str, type[Adversary]] = {
    "random": RandomGuess,
    "constant": ConstantGuess,
    "decode-without-key": DecodeWithoutKey,
    "oracle-leak": OracleLeak,
}


def wilson_interval(wins: int, n: int, z: float = 1.96) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    p = wins / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return centre - half, centre + half


def seeded_key_source(rng: np.random.Generator) -> Callable[[], SessionKey]:
    return lambda: SessionKey(rng.bytes(16), 1)


def run_distinguishing_game(cfg: GameConfig, key_source: Callable[[], SessionKey] | None = None,
                            seed: int = 0, adversary: Adversary | None = None) -> GameResult:
    """Play ``cfg.trials`` rounds of the left-or-right encryption game.

    Each round uses a fresh session key.  Challenges with unequal lengths
    are rejected and excluded from the advantage.
    """
    oracle_rng = make_rng((seed, 0x4F52))
    key_source = key_source or seeded_key_source(make_rng((seed, 0x4B53)))
    if adversary is None:
        adversary = ADVERSARIES[cfg.adversary](make_rng((seed, 0x4144)))
    wins = rejected = 0
    for _ in range(cfg.trials):
        s0, s1 = adversary.challenge()
        if len(s0) != len(s1):
            rejected += 1
            continue
        b = int(oracle_rng.integers(2))
        key = key_source()
        wire = encode_wire(encrypt_payload((s0, s1)[b], key))
        b_guess = adversary.guess(wire, s0, s1, key if adversary.sees_key else None)
        wins += b_guess == b
    played = cfg.trials - rejected
    lo, hi = wilson_interval(wins, played)
    adv = 2 * wins / played - 1 if played else 0.0
    return GameResult(cfg.adversary, played, wins, rejected, adv, 2 * lo - 1, 2 * hi - 1,
                      cfg.epsilon_threshold)
