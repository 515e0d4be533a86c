#!/usr/bin/env python3
"""Tests for the artifact writer"""

import json
import os
import sys

import pandas as pd
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from artifacts import FAILED_MARKER, MANIFEST_NAME, ArtifactWriter, sha256_bytes, sha256_file


class TestArtifactWriter:
    """Test cases for ArtifactWriter"""

    def test_write_frame_format(self, tmp_path):
        writer = ArtifactWriter(tmp_path, "demo", "abc")
        path = writer.write_frame("values.csv", pd.DataFrame({'x': [1, 2], 'y': [0.1, 1.0 / 3.0]}))
        assert path.read_bytes() == b"x,y\n1,0.1\n2,0.333333333333\n"

    def test_append_writes_header_once(self, tmp_path):
        writer = ArtifactWriter(tmp_path, "demo", "abc")
        writer.append_frame("rows.csv", pd.DataFrame({'a': [1]}))
        writer.append_frame("rows.csv", pd.DataFrame({'a': [2]}))
        assert (tmp_path / "rows.csv").read_text() == "a\n1\n2\n"

    def test_nested_paths(self, tmp_path):
        writer = ArtifactWriter(tmp_path, "demo", "abc")
        writer.write_frame("chains/one.csv", pd.DataFrame({'a': [1]}))
        assert (tmp_path / "chains" / "one.csv").exists()
        assert writer.files == ["chains/one.csv"]

    def test_manifest(self, tmp_path):
        writer = ArtifactWriter(tmp_path, "demo", "abc")
        writer.append_frame("rows.csv", pd.DataFrame({'a': [1, 2]}))
        writer.append_frame("rows.csv", pd.DataFrame({'a': [3]}))
        manifest = json.loads(writer.write_manifest(extra={'master_seed': 5}).read_text())
        assert manifest['scenario'] == "demo"
        assert manifest['scenario_sha256'] == "abc"
        assert manifest['status'] == "complete"
        assert manifest['master_seed'] == 5
        assert manifest['files'] == [
            {'path': "rows.csv", 'sha256': sha256_file(tmp_path / "rows.csv"), 'rows': 3},
        ]

    def test_write_json_listed_in_manifest(self, tmp_path):
        writer = ArtifactWriter(tmp_path, "demo", "abc")
        writer.write_json("fits.json", [{'family': 'exponential', 'nll': 1.5}])
        writer.write_json("fits.json", [{'family': 'exponential', 'nll': 1.5}, {'family': 'exponential', 'nll': 2.0}])
        assert json.loads((tmp_path / "fits.json").read_text())[1]['nll'] == 2.0
        manifest = json.loads(writer.write_manifest().read_text())
        assert manifest['files'] == [
            {'path': "fits.json", 'sha256': sha256_file(tmp_path / "fits.json"), 'rows': 2},
        ]

    def test_mark_failed(self, tmp_path):
        writer = ArtifactWriter(tmp_path, "demo", "abc")
        writer.append_frame("partial.csv", pd.DataFrame({'a': [1]}))
        writer.mark_failed(RuntimeError("boom"))
        assert (tmp_path / FAILED_MARKER).read_text() == "RuntimeError: boom\n"
        manifest = json.loads((tmp_path / MANIFEST_NAME).read_text())
        assert manifest['status'] == "failed"
        assert manifest['files'][0]['path'] == "partial.csv"

    def test_stale_marker_removed(self, tmp_path):
        (tmp_path / FAILED_MARKER).write_text("old\n")
        ArtifactWriter(tmp_path, "demo", "abc")
        assert not (tmp_path / FAILED_MARKER).exists()

    @pytest.mark.parametrize("data", [b"", b"abc"])
    def test_sha256(self, tmp_path, data):
        path = tmp_path / "blob"
        path.write_bytes(data)
        assert sha256_file(path) == sha256_bytes(data)
        assert len(sha256_bytes(data)) == 64
