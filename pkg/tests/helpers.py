"""Shared builders and numeric oracles for the test suites."""
from typing import Callable, Dict, Mapping, Optional, Sequence

import numpy as np

from config.constants import CONTENT_DIM
from config.run_config import ModelConfig
from core import ndgrad as nd
from core.features import FeatureRecord, SecurityPosture
from core.graph import WebsiteNode
from core.predict import Prediction

TINY_MODEL = ModelConfig(
    modalities=("location", "category", "security"),
    hidden_dim=4,
    num_layers=2,
    category_dim=3,
    url_dim=3,
    url_char_dim=2,
)


def make_record(i: int, category: Optional[int] = None, url: Optional[str] = None,
                security: Optional[SecurityPosture] = None) -> FeatureRecord:
    rng = np.random.default_rng(1000 + i)
    return FeatureRecord(
        site_id=f"site-{i:05d}",
        ip=f"10.{i % 7}.{(i * 37) % 256}.{1 + i % 250}",
        category=i % 20 if category is None else category,
        url=url or f"https://example{i}.com/login",
        content_vec=tuple(float(x) for x in np.round(rng.normal(size=CONTENT_DIM), 6)),
        security=security or SecurityPosture(
            software_count=i % 5, avg_cves=0.5 * (i % 3), avg_cvss=1.0 + i % 4,
            max_cvss=3.0 + i % 4, https_ok=i % 2, cert_errors=i % 3,
        ),
    )


def make_nodes(n: int):
    return [WebsiteNode(node_id=i, site_id=f"site-{i:05d}") for i in range(n)]


def make_prediction(edge_id: int, u: int, v: int, p_hat: float, label: Optional[int] = None,
                    reuse_rate: Optional[float] = None, tau: float = 0.5) -> Prediction:
    return Prediction(edge_id, u, v, p_hat, p_hat >= tau, label, reuse_rate)


def numeric_gradient(f: Callable[[Dict[str, np.ndarray]], float], inputs: Mapping[str, np.ndarray],
                     name: str, eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of f with respect to inputs[name]."""
    base = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}
    out = np.zeros_like(base[name])
    flat = out.reshape(-1)
    for j in range(flat.size):
        plus = {k: v.copy() for k, v in base.items()}
        minus = {k: v.copy() for k, v in base.items()}
        plus[name].reshape(-1)[j] += eps
        minus[name].reshape(-1)[j] -= eps
        flat[j] = (f(plus) - f(minus)) / (2.0 * eps)
    return out


def check_gradients(build: Callable[[Dict[str, nd.Tensor]], nd.Tensor], inputs: Mapping[str, np.ndarray],
                    constants: Optional[Mapping[str, np.ndarray]] = None, names: Optional[Sequence[str]] = None,
                    rtol: float = 1e-4, atol: float = 1e-7) -> None:
    """Assert that backward() agrees with finite differences for every input."""
    constants = dict(constants or {})
    with nd.Tape():
        tensors = {k: nd.Tensor(v, requires_grad=True, name=k) for k, v in inputs.items()}
        tensors.update({k: nd.Tensor(v, name=k) for k, v in constants.items()})
        loss = build(tensors)
    analytic = nd.backward(loss, {k: tensors[k] for k in inputs})

    def f(values: Dict[str, np.ndarray]) -> float:
        plain = {k: nd.Tensor(v) for k, v in values.items()}
        plain.update({k: nd.Tensor(v) for k, v in constants.items()})
        return build(plain).item()

    for name in names or list(inputs):
        numeric = numeric_gradient(f, inputs, name)
        np.testing.assert_allclose(analytic[name], numeric, rtol=rtol, atol=atol, err_msg=name)


def leaky(x, slope: float = 0.2):
    return np.where(x > 0, x, slope * x)


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def softmax(x):
    e = np.exp(x - np.max(x))
    return e / e.sum()
