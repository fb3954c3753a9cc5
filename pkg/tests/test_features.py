import numpy as np
import pytest

from config.constants import URL_MAX_LEN, URL_UNK_INDEX
from core import ndgrad as nd
from core.features import (
    BN_RUNNING_MEAN,
    BN_RUNNING_VAR,
    CATEGORY_TABLE,
    URL_B,
    URL_CHAR_TABLE,
    URL_W,
    FeatureRecord,
    FeatureTable,
    SecurityPosture,
    build_modality_inputs,
    embed_category,
    embed_ip,
    embed_security,
    encode_url,
    encode_urls,
    running_stat_updates,
    url_codes,
)
from core.ndgrad import BatchStats
from core.params import init_params
from tests.helpers import TINY_MODEL, make_nodes, make_record, sigmoid
from utils.errors import DataError


def _url_params(seed=0, char_dim=3, hidden=4):
    rng = np.random.default_rng(seed)
    return {
        URL_CHAR_TABLE: nd.Tensor(rng.normal(size=(97, char_dim))),
        URL_W: nd.Tensor(rng.normal(scale=0.5, size=(char_dim + hidden, 4 * hidden))),
        URL_B: nd.Tensor(rng.normal(scale=0.1, size=4 * hidden)),
    }


def _lstm_reference(codes, table, W, b):
    hidden = b.size // 4
    h, c = np.zeros(hidden), np.zeros(hidden)
    for code in codes:
        z = np.concatenate([table[code], h]) @ W + b
        i, f = sigmoid(z[:hidden]), sigmoid(z[hidden:2 * hidden])
        g, o = np.tanh(z[2 * hidden:3 * hidden]), sigmoid(z[3 * hidden:])
        c = f * c + i * g
        h = o * np.tanh(c)
    return h


class TestLocation:
    def test_bits_most_significant_first(self):
        bits = embed_ip("1.2.3.4")
        assert bits.shape == (32,)
        expected = [int(b) for b in "".join(f"{octet:08b}" for octet in (1, 2, 3, 4))]
        np.testing.assert_array_equal(bits, expected)
        assert embed_ip("255.255.255.255").sum() == 32
        assert embed_ip("0.0.0.0").sum() == 0

    @pytest.mark.parametrize("ip", ["::1", "2001:db8::1", "1.2.3", "not-an-ip", "256.1.1.1"])
    def test_rejected_addresses(self, ip):
        with pytest.raises(DataError):
            embed_ip(ip)


class TestCategory:
    def test_lookup_and_sparse_gradient(self):
        table_value = np.random.default_rng(1).normal(size=(20, 3))
        with nd.Tape():
            table = nd.Tensor(table_value, requires_grad=True)
            out = embed_category(7, table)
            loss = nd.sum_all(out)
        np.testing.assert_array_equal(out.data, table_value[7])
        grad = nd.backward(loss, {"table": table})["table"]
        np.testing.assert_array_equal(grad[7], np.ones(3))
        assert not np.delete(grad, 7, axis=0).any()

    def test_out_of_range(self):
        with pytest.raises(DataError):
            embed_category(20, nd.Tensor(np.zeros((20, 3))))


class TestUrl:
    def test_codes(self):
        np.testing.assert_array_equal(url_codes(" a~"), [1, ord("a") - 31, 95])
        assert url_codes("a\tb")[1] == URL_UNK_INDEX
        assert url_codes("x" * 300).size == URL_MAX_LEN
        with pytest.raises(DataError):
            url_codes("")

    def test_encoder_matches_reference_lstm(self):
        params = _url_params()
        url = "https://shop.example.org/login?x=1"
        expected = _lstm_reference(url_codes(url), *(params[k].data for k in (URL_CHAR_TABLE, URL_W, URL_B)))
        np.testing.assert_allclose(encode_url(url, params).data, expected, rtol=1e-12, atol=1e-14)

    def test_padded_batch_matches_single_urls(self):
        params = _url_params(seed=2)
        urls = ["https://a.io", "https://much-longer-name.example.com/forum/index", "b.co"]
        coded = [url_codes(u) for u in urls]
        lengths = np.array([c.size for c in coded])
        padded = np.zeros((3, lengths.max()), dtype=np.int64)
        for row, c in enumerate(coded):
            padded[row, :c.size] = c
        batch = encode_urls(padded, lengths, params).data
        for row, url in enumerate(urls):
            np.testing.assert_allclose(batch[row], encode_url(url, params).data, rtol=1e-12, atol=1e-14)


class TestSecurity:
    def test_train_mode_standardises_columns(self):
        raw = np.random.default_rng(3).uniform(0, 10, size=(50, 6))
        params = init_params(TINY_MODEL, 0).as_tensors()
        out, stats = embed_security(raw, params, training=True)
        np.testing.assert_allclose(out.data.mean(axis=0), np.zeros(6), atol=1e-10)
        np.testing.assert_allclose(out.data.var(axis=0), np.ones(6), rtol=1e-3)
        np.testing.assert_allclose(stats.mean, raw.mean(axis=0))

    def test_inference_reads_running_statistics(self):
        raw = np.array([[1.0, 2.0, 3.0, 4.0, 1.0, 0.0]])
        params = init_params(TINY_MODEL, 0).as_tensors()
        out, stats = embed_security(raw, params, training=False)
        assert stats is None
        np.testing.assert_allclose(out.data, raw / np.sqrt(1.0 + 1e-5))

    def test_running_stat_momentum(self):
        stats = BatchStats(mean=np.array([2.0]), var=np.array([3.0]))
        out = running_stat_updates(np.array([0.0]), np.array([1.0]), stats, batch_size=4, momentum=0.1)
        np.testing.assert_allclose(out[BN_RUNNING_MEAN], [0.2])
        np.testing.assert_allclose(out[BN_RUNNING_VAR], [0.9 + 0.1 * 4.0])

    def test_wrong_width(self):
        with pytest.raises(DataError):
            embed_security(np.zeros((3, 5)), init_params(TINY_MODEL, 0).as_tensors(), training=False)

    @pytest.mark.parametrize("kwargs", [
        {"https_ok": 2},
        {"software_count": -1},
        {"avg_cvss": 11.0, "max_cvss": 11.0},
        {"avg_cvss": 5.0, "max_cvss": 4.0},
    ])
    def test_posture_validation(self, kwargs):
        with pytest.raises(DataError):
            SecurityPosture(**kwargs)


class TestFeatureRecord:
    def test_validation(self):
        good = make_record(1)
        with pytest.raises(DataError):
            FeatureRecord(good.site_id, good.ip, 20, good.url, good.content_vec)
        with pytest.raises(DataError):
            FeatureRecord(good.site_id, good.ip, 1, good.url, good.content_vec[:10])
        with pytest.raises(DataError):
            FeatureRecord(good.site_id, "::1", 1, good.url, good.content_vec)
        with pytest.raises(DataError):
            FeatureRecord(good.site_id, good.ip, 1, "", good.content_vec)


class TestFeatureTable:
    def test_build_requires_every_site(self):
        records = {make_record(i).site_id: make_record(i) for i in range(3)}
        with pytest.raises(DataError):
            FeatureTable.build(make_nodes(4), records)

    def test_rows_and_subset(self, six_node_table):
        np.testing.assert_array_equal(six_node_table.rows([2, 5]), [2, 5])
        sub = six_node_table.subset([5, 1])
        np.testing.assert_array_equal(sub.node_ids, [1, 5])
        with pytest.raises(DataError):
            sub.rows([2])

    def test_modality_inputs_are_row_aligned(self, six_node_table):
        params = init_params(TINY_MODEL, 0).as_tensors()
        inputs, stats = build_modality_inputs(six_node_table, [0, 3, 4], params, TINY_MODEL, training=True)
        assert [x.shape for x in inputs] == [(3, 32), (3, 3), (3, 6)]
        np.testing.assert_array_equal(inputs[0].data[1], embed_ip(six_node_table.records[3].ip))
        np.testing.assert_array_equal(inputs[1].data[2], params[CATEGORY_TABLE].data[six_node_table.categories[4]])
        assert stats is not None
