import numpy as np
import pytest
from scipy import stats

from kernseg import imaging
from kernseg.errors import DomainError, ParseError
from kernseg.imaging import PhantomSpec, TrainingCorpus


def test_pgm_exact_bytes(tmp_path):
    img = np.array([[0, 1], [254, 255]], dtype=np.uint8)
    p = tmp_path / "a.pgm"
    imaging.write_pgm(img, p)
    assert p.read_bytes() == b"P5\n2 2\n255\n" + bytes([0, 1, 254, 255])


def test_pgm_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, size=(37, 53), dtype=np.uint8)
    p = tmp_path / "r.pgm"
    imaging.write_pgm(img, p)
    back = imaging.read_pgm(p)
    assert back.dtype == np.uint8 and np.array_equal(back, img)


def test_pgm_header_comments_accepted():
    data = b"P5\n# made by hand\n3 1 # width height\n255\n" + bytes([7, 8, 9])
    assert imaging.parse_pgm(data).tolist() == [[7, 8, 9]]


@pytest.mark.parametrize("data, offset", [
    (b"P2\n2 2\n255\n1 2 3 4", 0),
    (b"P5\n2 2\n65535\n" + bytes(8), 7),
    (b"P5\n2 x\n255\n" + bytes(4), 5),
])
def test_pgm_header_errors(data, offset):
    with pytest.raises(ParseError) as info:
        imaging.parse_pgm(data)
    assert info.value.offset == offset


def test_pgm_truncated_payload():
    data = b"P5\n4 4\n255\n" + bytes(10)
    with pytest.raises(ParseError) as info:
        imaging.parse_pgm(data)
    assert info.value.offset == len(data)
    with pytest.raises(ParseError):
        imaging.parse_pgm(b"P5\n4")


def test_mask_strictly_binary(tmp_path):
    m = np.zeros((4, 5), dtype=bool)
    m[1:3, 2:4] = True
    p = tmp_path / "m.pgm"
    imaging.write_mask(m, p)
    assert np.array_equal(imaging.read_mask(p), m)
    imaging.write_pgm(np.full((2, 2), 128, dtype=np.uint8), p)
    with pytest.raises(DomainError):
        imaging.read_mask(p)


def test_phantom_deterministic():
    a = imaging.gen_phantom(PhantomSpec(seed=5))
    b = imaging.gen_phantom(PhantomSpec(seed=5))
    c = imaging.gen_phantom(PhantomSpec(seed=6))
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert not np.array_equal(a[0], c[0])


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_noiseless_phantom_respects_bands(seed):
    spec = PhantomSpec(seed=seed, noise_sigma=0.0)
    img, mask = imaging.gen_phantom(spec)
    tumor_band = ((img >= spec.ring_band[0]) & (img <= spec.ring_band[1])) | \
                 ((img >= spec.core_band[0]) & (img <= spec.core_band[1]))
    assert np.all(tumor_band[mask])
    assert not np.any(tumor_band[~mask])


@pytest.mark.parametrize("seed", range(5))
def test_tumor_area_matches_ellipse(seed):
    spec = PhantomSpec(seed=seed)
    _, mask = imaging.gen_phantom(spec)
    assert abs(mask.sum() / imaging.tumor_area(spec) - 1.0) <= 0.10


def test_phantom_spec_validation():
    with pytest.raises(DomainError):
        PhantomSpec(ring_band=(100, 140))  # too close to tissue
    with pytest.raises(DomainError):
        PhantomSpec(ring_band=(190, 300))
    with pytest.raises(DomainError):
        PhantomSpec(vessel_band=(180, 200))
    with pytest.raises(DomainError):
        imaging.gen_phantom(PhantomSpec(tumor_center=(20, 20)))


def test_phantom_series_specs_distinct():
    specs = imaging.phantom_series(4, seed=1)
    assert len({s.seed for s in specs}) == 4
    assert specs == imaging.phantom_series(4, seed=1)


def _corpus(seed=0, n=1, **kw):
    pairs = [imaging.gen_phantom(PhantomSpec(seed=seed + i, **kw)) for i in range(n)]
    return TrainingCorpus([p[0] for p in pairs], [p[1] for p in pairs])


def test_sample_budget_zero():
    s = imaging.sample_pixels(_corpus(), 0, seed=0)
    assert len(s) == 0


def test_sample_full_class():
    c = _corpus(shape=(64, 64), brain_center=(32, 32), brain_axes=(28, 24),
                tumor_center=(30, 34), tumor_radii=(8, 6), vessels=0)
    tumor_n, _ = c.class_sizes()
    s = imaging.sample_pixels(c, tumor_n, seed=3)
    got = s.locations[s.labels == 1]
    want = np.argwhere(c.masks[0])
    assert sorted(map(tuple, got)) == sorted(map(tuple, want))


def test_sample_clamps_and_reports():
    c = _corpus(shape=(64, 64), brain_center=(32, 32), brain_axes=(28, 24),
                tumor_center=(30, 34), tumor_radii=(8, 6), vessels=0)
    tumor_n, _ = c.class_sizes()
    with pytest.warns(UserWarning):
        s = imaging.sample_pixels(c, tumor_n + 100, seed=0)
    assert s.clamped == {1: tumor_n}
    assert np.sum(s.labels == 1) == tumor_n and np.sum(s.labels == -1) == tumor_n + 100


def test_sample_deterministic_and_consistent():
    c = _corpus(n=2)
    a = imaging.sample_pixels(c, 500, seed=4)
    b = imaging.sample_pixels(c, 500, seed=4)
    assert np.array_equal(a.locations, b.locations) and np.array_equal(a.image_index, b.image_index)
    for v, (r, col), lab, i in zip(a.intensities, a.locations, a.labels, a.image_index):
        assert c.images[i][r, col] == v
        assert c.masks[i][r, col] == (lab == 1)


def test_sample_uniform_over_quadrants():
    c = _corpus()
    _, normal_n = c.class_sizes()
    with pytest.warns(UserWarning):
        s = imaging.sample_pixels(c, 20000, seed=11)
    locs = s.locations[s.labels == -1]
    quad = (locs[:, 0] >= 128) * 2 + (locs[:, 1] >= 128)
    observed = np.bincount(quad, minlength=4)
    pop = np.argwhere(~c.masks[0])
    pq = np.bincount((pop[:, 0] >= 128) * 2 + (pop[:, 1] >= 128), minlength=4)
    expected = pq / pq.sum() * observed.sum()
    assert stats.chisquare(observed, expected).pvalue > 0.01


def test_manifest_round_trip(tmp_path):
    img, mask = imaging.gen_phantom(PhantomSpec(seed=0))
    (tmp_path / "d").mkdir()
    imaging.write_pgm(img, tmp_path / "d" / "i.pgm")
    imaging.write_mask(mask, tmp_path / "d" / "m.pgm")
    man = tmp_path / "manifest.jsonl"
    imaging.write_manifest(man, [{"image_path": str(tmp_path / "d" / "i.pgm"),
                                  "mask_path": str(tmp_path / "d" / "m.pgm"), "split": "train"}])
    assert '"image_path": "d/i.pgm"' in man.read_text()
    images, masks = imaging.load_split(man, "train")
    assert np.array_equal(images[0], img) and np.array_equal(masks[0], mask)
    with pytest.raises(DomainError):
        imaging.load_split(man, "test")
    man.write_text('{"image_path": "x"}\n')
    with pytest.raises(DomainError):
        imaging.read_manifest(man)
