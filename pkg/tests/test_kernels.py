"""Agreement between the numba and pure-numpy kernel implementations.

The numba flavor is exercised when numba imports (regardless of the active
backend), so both code paths stay covered no matter how PROTOFED_BACKEND is
set for the suite.
"""

import numpy as np
import pytest

import protofed.kernels as K

try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

IMPL_SETS = [("numpy", K.numpy_impls())]
if HAVE_NUMBA:
    IMPL_SETS.append(("numba", K.numba_impls()))


def random_case(seed):
    rng = np.random.default_rng(seed)
    b, d, p = 16, 8, 9
    z = rng.uniform(0, 1, (b, d))
    z[0] = 0.0  # degenerate feature row
    zy = rng.integers(0, 3, b)
    protos = rng.uniform(0.05, 1, (p, d))
    pclass = np.sort(rng.integers(0, 4, p))  # class 3 may be unrepresented
    return z, zy.astype(np.int64), protos, pclass.astype(np.int64)


@pytest.mark.parametrize("name,impls", IMPL_SETS)
class TestEachBackend:
    def test_pairwise_cosine_values(self, name, impls, rng):
        x = rng.normal(size=(12, 5))
        x[3] = 0.0
        sim = impls["pairwise_cosine"](np.ascontiguousarray(x))
        xn = x / np.maximum(np.linalg.norm(x, axis=1, keepdims=True), 1e-300)
        xn[3] = 0.0
        expected = xn @ xn.T
        mask = ~np.eye(12, dtype=bool)
        np.testing.assert_allclose(sim[mask], expected[mask], atol=1e-12)

    def test_first_neighbor_labels_two_pairs(self, name, impls):
        pts = np.array([[1.0, 0.0], [0.98, 0.2], [0.0, 1.0], [0.2, 0.98]])
        sim = impls["pairwise_cosine"](pts)
        labels = impls["first_neighbor_labels"](sim)
        np.testing.assert_array_equal(labels, [0, 0, 1, 1])

    def test_proto_loss_grad_matches_reference(self, name, impls, rng):
        from protofed.losses import LossConfig, prototype_loss, prototype_loss_grad_z
        from protofed.prototypes import GlobalPrototypeSet, Prototype

        z, zy, protos, pclass = random_case(3)
        hyper = LossConfig()
        gs = GlobalPrototypeSet(round_index=1)
        for j in range(protos.shape[0]):
            gs.by_class.setdefault(int(pclass[j]), []).append(Prototype(int(pclass[j]), protos[j], 1))
        loss, dz = impls["proto_loss_batch"](
            np.ascontiguousarray(z), zy, np.ascontiguousarray(protos), pclass,
            hyper.sparsity, hyper.temperature, True, True,
        )
        counts = gs.counts()
        for i in range(z.shape[0]):
            yi = int(zy[i])
            if counts.get(yi, 0) == 0:
                assert loss[i] == 0.0
                np.testing.assert_array_equal(dz[i], np.zeros(z.shape[1]))
                continue
            np.testing.assert_allclose(loss[i], prototype_loss(z[i], yi, gs, hyper), atol=1e-11)
            np.testing.assert_allclose(dz[i], prototype_loss_grad_z(z[i], yi, gs, hyper), atol=1e-10)


@pytest.mark.skipif(not HAVE_NUMBA, reason="numba unavailable")
class TestCrossBackendAgreement:
    def test_pairwise_cosine(self):
        a, b = K.numpy_impls(), K.numba_impls()
        for seed in range(5):
            x = np.random.default_rng(seed).normal(size=(30, 7))
            np.testing.assert_allclose(
                a["pairwise_cosine"](x), b["pairwise_cosine"](x), atol=1e-13
            )

    def test_first_neighbor_labels(self):
        a, b = K.numpy_impls(), K.numba_impls()
        for seed in range(20):
            x = np.random.default_rng(seed).normal(size=(25, 6))
            sim = a["pairwise_cosine"](x)
            np.testing.assert_array_equal(
                a["first_neighbor_labels"](sim), b["first_neighbor_labels"](sim)
            )

    def test_proto_loss_batch(self):
        a, b = K.numpy_impls(), K.numba_impls()
        for seed in range(10):
            z, zy, protos, pclass = random_case(seed)
            flags = [(True, False), (False, True), (True, True)]
            for c_on, r_on in flags:
                la, dza = a["proto_loss_batch"](z, zy, protos, pclass, 0.25, 0.07, c_on, r_on)
                lb, dzb = b["proto_loss_batch"](z, zy, protos, pclass, 0.25, 0.07, c_on, r_on)
                np.testing.assert_allclose(la, lb, atol=1e-12)
                np.testing.assert_allclose(dza, dzb, atol=1e-11)


class TestDispatch:
    def test_active_backend_is_valid(self):
        assert K.BACKEND in ("numba", "numpy")

    def test_public_wrappers_coerce_dtypes(self):
        sim = K.pairwise_cosine([[1, 0], [0, 1]])
        assert sim.dtype == np.float64
        labels = K.first_neighbor_labels(sim)
        assert labels.dtype == np.int64
