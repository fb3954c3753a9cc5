"""Synthetic breach corpora with planted feature -> reuse correlations.

Sites fall into categories, URL families, security tiers and IP regions.
Per-pair reuse rates rise when two sites share a category and fall with the
gap between their security tiers; everything else is noise.
"""
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from config.constants import (
    CATEGORY_COUNT,
    CONTENT_DIM,
    SYNTH_BASE_REUSE,
    SYNTH_CATEGORY_AFFINITY,
    SYNTH_CONTENT_SPREAD,
    SYNTH_NOISE,
    SYNTH_PAIR_PROBABILITY,
    SYNTH_SAME_CATEGORY_PAIR_BOOST,
    SYNTH_SECURITY_GAP_PENALTY,
    SYNTH_SECURITY_TIERS,
    SYNTH_SITES,
    SYNTH_URL_FAMILIES_PER_CATEGORY,
    SYNTH_USERS_PER_PAIR_RANGE,
    NUM_CLIENTS,
)
from config.run_config import RunConfig
from core.features import FeatureRecord, SecurityPosture
from core.graph import AccountStat, WebsiteNode
from utils.errors import ConfigError
from utils.logging_config import get_logger
from utils.seeding import derive_rng

logger = get_logger(__name__)

_TLDS = ("com", "net", "org", "io", "shop", "info", "co", "biz")
_PATH_WORDS = ("login", "account", "member", "forum", "store", "news", "play", "mail", "app", "home")
_SYLLABLES = ("ka", "lo", "mi", "ne", "ru", "ta", "ve", "zo", "pa", "shi", "do", "ga")


@dataclass(frozen=True)
class GeneratorConfig:
    n_sites: int = SYNTH_SITES
    clients: int = NUM_CLIENTS
    seed: int = 0
    pair_probability: float = SYNTH_PAIR_PROBABILITY
    category_affinity: float = SYNTH_CATEGORY_AFFINITY
    security_gap_penalty: float = SYNTH_SECURITY_GAP_PENALTY
    base_reuse: float = SYNTH_BASE_REUSE
    noise: float = SYNTH_NOISE
    users_per_pair_range: Tuple[int, int] = SYNTH_USERS_PER_PAIR_RANGE

    @classmethod
    def from_run_config(cls, config: RunConfig) -> "GeneratorConfig":
        return cls(
            n_sites=config.n_sites,
            clients=config.clients,
            seed=config.seed,
            pair_probability=config.pair_probability,
            category_affinity=config.category_affinity,
            security_gap_penalty=config.security_gap_penalty,
            base_reuse=config.base_reuse,
            noise=config.noise,
            users_per_pair_range=tuple(config.users_per_pair_range),
        )


@dataclass
class SyntheticCorpus:
    nodes: List[WebsiteNode]
    account_stats: List[AccountStat]
    records: List[FeatureRecord]
    categories: np.ndarray = field(repr=False)
    tiers: np.ndarray = field(repr=False)


def synth_generate(config: GeneratorConfig) -> SyntheticCorpus:
    if config.n_sites < 2 * config.clients:
        raise ConfigError(f"{config.n_sites} sites cannot feed {config.clients} administrators (need >= 2 each)")
    low, high = config.users_per_pair_range
    if not 1 <= low <= high:
        raise ConfigError(f"users_per_pair_range {config.users_per_pair_range} is infeasible")

    rng = derive_rng(config.seed, "generator")
    n = config.n_sites
    categories = rng.integers(CATEGORY_COUNT, size=n)
    families = rng.integers(SYNTH_URL_FAMILIES_PER_CATEGORY, size=n)
    tiers = rng.integers(SYNTH_SECURITY_TIERS, size=n)

    centers = rng.normal(0.0, 1.0, size=(CATEGORY_COUNT, CONTENT_DIM))
    content = centers[categories] + rng.normal(0.0, SYNTH_CONTENT_SPREAD, size=(n, CONTENT_DIM))
    content = np.round(content, 6)

    records: List[FeatureRecord] = []
    nodes: List[WebsiteNode] = []
    for i in range(n):
        site_id = f"site-{i:05d}"
        nodes.append(WebsiteNode(node_id=i, site_id=site_id))
        records.append(FeatureRecord(
            site_id=site_id,
            ip=_ip_address(rng, int(categories[i]), int(tiers[i])),
            category=int(categories[i]),
            url=_url(rng, int(categories[i]), int(families[i])),
            content_vec=tuple(float(x) for x in content[i]),
            security=_posture(rng, int(tiers[i])),
        ))

    account_stats = _pair_statistics(rng, config, categories, tiers)
    logger.info(
        "Generated %d sites and %d sharing pairs (seed %d)", n, len(account_stats), config.seed,
    )
    return SyntheticCorpus(nodes, account_stats, records, categories, tiers)


def planted_rates(
    config: GeneratorConfig, same_category: np.ndarray, tier_gap: np.ndarray
) -> np.ndarray:
    """Noise-free reuse rate of each pair."""
    rate = (
        config.base_reuse
        + config.category_affinity * same_category.astype(np.float64)
        - config.security_gap_penalty * tier_gap.astype(np.float64)
    )
    return np.clip(rate, 0.0, 1.0)


def _pair_statistics(
    rng: np.random.Generator, config: GeneratorConfig, categories: np.ndarray, tiers: np.ndarray
) -> List[AccountStat]:
    iu, ju = np.triu_indices(config.n_sites, k=1)
    same = categories[iu] == categories[ju]
    boost = np.where(same, SYNTH_SAME_CATEGORY_PAIR_BOOST, 1.0)
    linked = rng.random(iu.size) < np.minimum(1.0, config.pair_probability * boost)
    iu, ju, same = iu[linked], ju[linked], same[linked]

    low, high = config.users_per_pair_range
    shared = rng.integers(low, high + 1, size=iu.size)
    rate = planted_rates(config, same, np.abs(tiers[iu] - tiers[ju]))
    rate = np.clip(rate + config.noise * rng.normal(size=iu.size), 0.0, 1.0)
    reusing = rng.binomial(shared, rate)
    return [
        (int(u), int(v), int(s), int(r))
        for u, v, s, r in zip(iu, ju, shared, reusing)
    ]


def _ip_address(rng: np.random.Generator, category: int, tier: int) -> str:
    # one /16 hosting region per (category, tier)
    return f"{11 + category * 11 % 200}.{16 + tier * 40}.{int(rng.integers(256))}.{int(rng.integers(1, 255))}"


def _url(rng: np.random.Generator, category: int, family: int) -> str:
    tld = _TLDS[(category + family) % len(_TLDS)]
    path = _PATH_WORDS[(category * SYNTH_URL_FAMILIES_PER_CATEGORY + family) % len(_PATH_WORDS)]
    name = "".join(_SYLLABLES[int(k)] for k in rng.integers(len(_SYLLABLES), size=int(rng.integers(2, 4))))
    return f"https://{name}{int(rng.integers(100))}.{tld}/{path}"


def _posture(rng: np.random.Generator, tier: int) -> SecurityPosture:
    software = int(rng.poisson(2 + 3 * tier))
    avg_cvss = float(min(10.0, 1.5 + 2.0 * tier + rng.uniform(0.0, 1.0)))
    max_cvss = float(min(10.0, avg_cvss + rng.uniform(0.0, 2.0)))
    return SecurityPosture(
        software_count=software,
        avg_cves=round(float(tier * 1.5 + rng.uniform(0.0, 1.0)), 4),
        avg_cvss=round(avg_cvss, 4),
        max_cvss=round(max(max_cvss, avg_cvss), 4),
        https_ok=int(rng.random() < 0.9 - 0.25 * tier),
        cert_errors=int(rng.poisson(0.5 * tier)),
    )
