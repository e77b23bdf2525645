"""Everything written here must read back through the trainer, byte-validated
and lattice-checked: that reader is the authority on the format."""

import json
import os

import numpy as np
import pytest
from langfield.pyramid import (PyramidFormatError, build_grid_layout,
                               interpolate_language_target, read_pyramid,
                               sample_dino_target)

from embed_extract.cli import main as cli_main
from embed_extract.config import ExtractorConfig
from embed_extract.container import DinoBlock, LevelBlock, write_container
from embed_extract.extract import extract_dino, extract_pyramids
from embed_extract.synthetic import SyntheticVocabulary


@pytest.fixture(scope="module")
def extracted(small_dataset, tmp_path_factory):
    out = str(tmp_path_factory.mktemp("ex") / "synth.lerf")
    ds = small_dataset["out_dir"]
    with open(os.path.join(ds, "layout.json")) as fh:
        layout = json.load(fh)
    cfg = ExtractorConfig(synthetic=True, embed_dim=layout["embed_dim"],
                          dino_dim=layout["dino_dim"], seed=11)
    vocab = SyntheticVocabulary(layout["region_names"],
                                embed_dim=cfg.embed_dim,
                                dino_dim=cfg.dino_dim, seed=cfg.seed)
    extract_pyramids(ds, cfg, vocab, out_path=out)
    extract_dino(ds, cfg, vocab, out)
    return {"path": out, "cfg": cfg, "vocab": vocab, "layout": layout,
            "dataset": ds}


def test_trainer_reads_and_validates(extracted):
    layout = extracted["layout"]
    pyr = read_pyramid(extracted["path"], layout["width"], layout["height"])
    assert pyr.n_frames == 3
    assert pyr.n_levels == layout["n_levels"]
    assert pyr.embed_dim == layout["embed_dim"]
    assert pyr.dino_dim == layout["dino_dim"]
    for levels in pyr.levels_per_frame:
        for lv in levels:
            norms = np.linalg.norm(lv.embeddings.astype(np.float64), axis=2)
            assert np.max(np.abs(norms - 1.0)) < 1e-4


def test_grid_counts_match_trainer_layout(extracted):
    layout = extracted["layout"]
    pyr = read_pyramid(extracted["path"], layout["width"], layout["height"])
    for lv in pyr.levels_per_frame[0]:
        cx, cy = build_grid_layout(layout["width"], layout["height"],
                                   lv.crop_side_px, pyr.overlap)
        ny, nx, _ = lv.embeddings.shape
        assert (nx, ny) == (len(cx), len(cy))


def test_two_runs_byte_identical(extracted, tmp_path):
    again = str(tmp_path / "again.lerf")
    extract_pyramids(extracted["dataset"], extracted["cfg"],
                     extracted["vocab"], out_path=again)
    extract_dino(extracted["dataset"], extracted["cfg"],
                 extracted["vocab"], again)
    with open(extracted["path"], "rb") as fh:
        first = fh.read()
    with open(again, "rb") as fh:
        second = fh.read()
    assert first == second


def test_pyramids_only_file_is_truncated_for_trainer(extracted, tmp_path):
    partial = str(tmp_path / "partial.lerf")
    extract_pyramids(extracted["dataset"], extracted["cfg"],
                     extracted["vocab"], out_path=partial)
    layout = extracted["layout"]
    with pytest.raises(PyramidFormatError, match="truncated"):
        read_pyramid(partial, layout["width"], layout["height"])


def test_stored_vector_reproduced_at_grid_node(extracted):
    layout = extracted["layout"]
    pyr = read_pyramid(extracted["path"], layout["width"], layout["height"])
    lv = pyr.levels_per_frame[1][2]
    s_level = lv.crop_side_px / min(layout["width"], layout["height"])
    got = interpolate_language_target(
        pyr, 1, (lv.centers_x[1], lv.centers_y[1]), s_level)
    np.testing.assert_allclose(got, lv.embeddings[1, 1].astype(np.float64),
                               atol=1e-7)


def test_dino_pixel_equals_region_base(extracted):
    layout = extracted["layout"]
    pyr = read_pyramid(extracted["path"], layout["width"], layout["height"])
    region = np.load(os.path.join(extracted["dataset"], "regions",
                                  "train_000.npy"))
    fmap = pyr.dino_per_frame[0]
    assert fmap.features.shape[:2] == region.shape  # stride 1
    for (y, x) in [(0, 0), (40, 60), (95, 127)]:
        got = sample_dino_target(pyr, 0, (float(x), float(y)))
        expect = extracted["vocab"].dino_pixel(int(region[y, x]))
        np.testing.assert_allclose(got, expect, atol=1e-7)


def test_constant_feature_map_roundtrip(tmp_path):
    from embed_extract.layout import grid_centers

    d, dd = 6, 3
    rng = np.random.default_rng(4)
    levels = []
    for side in (8, 16):
        cx, cy = grid_centers(32, 24, side, 0.5)
        emb = rng.standard_normal((len(cy), len(cx), d))
        emb /= np.linalg.norm(emb, axis=2, keepdims=True)
        levels.append(LevelBlock(side, emb.astype(np.float32)))
    const = np.full((12, 16, dd), 0.25, dtype=np.float32)
    path = str(tmp_path / "tiny.lerf")
    write_container(path, [levels], [DinoBlock(const)], d, dd)
    pyr = read_pyramid(path, 32, 24)
    np.testing.assert_array_equal(pyr.dino_per_frame[0].features, const)
    sh, sw = pyr.dino_per_frame[0].stride
    assert (sh, sw) == (24 / 12, 32 / 16)


def test_bad_norm_refused_before_writing(tmp_path):
    emb = np.full((1, 1, 4), 0.7, dtype=np.float32)
    with pytest.raises(ValueError, match="norm"):
        write_container(str(tmp_path / "bad.lerf"),
                        [[LevelBlock(8, emb), LevelBlock(16, emb)]],
                        [DinoBlock(np.zeros((2, 2, 2), np.float32))], 4, 2)


def test_cli_extract_end_to_end(small_dataset, tmp_path, capsys):
    out = str(tmp_path / "cli.lerf")
    rc = cli_main(["extract", "--dataset", small_dataset["out_dir"],
                   "--synthetic", "--seed", "11", "--out", out])
    assert rc == 0
    doc = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert doc["frames"] == 3 and doc["embed_dim"] == 8
    layout = json.load(open(os.path.join(small_dataset["out_dir"],
                                         "layout.json")))
    read_pyramid(out, layout["width"], layout["height"])


def test_cli_rejects_mismatched_manifest(small_dataset, tmp_path, capsys):
    layout = json.load(open(os.path.join(small_dataset["out_dir"],
                                         "layout.json")))
    layout["crop_sides_px"][0] += 1
    bad = tmp_path / "layout.json"
    bad.write_text(json.dumps(layout))
    rc = cli_main(["extract", "--dataset", small_dataset["out_dir"],
                   "--synthetic", "--out", str(tmp_path / "x.lerf"),
                   "--layout-manifest", str(bad)])
    assert rc == 2
    assert "crop sides" in capsys.readouterr().err
