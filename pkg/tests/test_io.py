import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scoretensor.errors import FormatError
from scoretensor.io import (read_coo, read_dense, read_index_list, read_tensor, write_coo, write_dense,
                            write_index_list)
from scoretensor.tensor import DenseTensor, SparseTensor


class TestCoo:
    def test_parse_with_time_and_comments(self, tmp_path):
        p = tmp_path / "a.coo"
        p.write_text("# dims 3 2 time\n0 1 1.5 0.25\n# note\n\n2 0 -3e-2 1\n")
        t = read_coo(p)
        assert t.dims == (3, 2) and t.has_time
        np.testing.assert_array_equal(t.indices, [[0, 1], [2, 0]])
        np.testing.assert_array_equal(t.values, [1.5, -0.03])
        np.testing.assert_array_equal(t.timestamps, [0.25, 1.0])

    def test_roundtrip_exact(self, tmp_path, rng):
        t = SparseTensor((4, 5), [[0, 1], [3, 4], [2, 2]], rng.normal(size=3) * 1e-7, [0.1, 0.2, 0.3])
        write_coo(tmp_path / "t.coo", t)
        back = read_coo(tmp_path / "t.coo")
        np.testing.assert_array_equal(back.values, t.values)
        np.testing.assert_array_equal(back.timestamps, t.timestamps)
        np.testing.assert_array_equal(back.indices, t.indices)

    @pytest.mark.parametrize("body", ["# dims 2\n0 1.0 extra\n", "# dims 2\nx 1.0\n", "#dim 2\n0 1\n",
                                      "# dims\n", "# dims 2\n0 abc\n"])
    def test_malformed(self, tmp_path, body):
        p = tmp_path / "bad.coo"
        p.write_text(body)
        with pytest.raises(FormatError):
            read_coo(p)

    def test_empty_body(self, tmp_path):
        p = tmp_path / "e.coo"
        p.write_text("# dims 2 2\n")
        assert len(read_coo(p)) == 0


class TestDense:
    @given(st.lists(st.integers(1, 4), min_size=1, max_size=4), st.integers(0, 2**31))
    @settings(max_examples=30, deadline=None)
    def test_roundtrip(self, tmp_path_factory, dims, seed):
        path = tmp_path_factory.mktemp("d") / "x.stdt"
        t = DenseTensor(tuple(dims), np.random.default_rng(seed).normal(size=dims))
        write_dense(path, t)
        back = read_dense(path)
        assert back.dims == t.dims
        np.testing.assert_array_equal(back.values, t.values)

    def test_layout(self, tmp_path):
        path = tmp_path / "x.stdt"
        write_dense(path, DenseTensor((2, 1), [1.0, 2.0]))
        raw = path.read_bytes()
        assert raw[:4] == b"STDT"
        assert raw[4:8] == (2).to_bytes(4, "little")
        assert raw[8:16] == (2).to_bytes(8, "little") and raw[16:24] == (1).to_bytes(8, "little")
        assert np.frombuffer(raw[24:], "<f8").tolist() == [1.0, 2.0]

    def test_bad_magic_and_truncation(self, tmp_path):
        p = tmp_path / "x.stdt"
        p.write_bytes(b"NOPE")
        with pytest.raises(FormatError):
            read_dense(p)
        write_dense(p, DenseTensor((3,), [1.0, 2.0, 3.0]))
        p.write_bytes(p.read_bytes()[:-8])
        with pytest.raises(FormatError):
            read_dense(p)

    def test_dispatch(self, tmp_path):
        write_dense(tmp_path / "d", DenseTensor((1,), [1.0]))
        (tmp_path / "s").write_text("# dims 1\n0 2.0\n")
        assert isinstance(read_tensor(tmp_path / "d"), DenseTensor)
        assert isinstance(read_tensor(tmp_path / "s"), SparseTensor)


def test_index_list_roundtrip(tmp_path):
    idx = np.array([[0, 1], [2, 3]])
    write_index_list(tmp_path / "m.txt", idx)
    np.testing.assert_array_equal(read_index_list(tmp_path / "m.txt"), idx)
