"""HTTP endpoint contracts via the in-process test client."""

import base64

import numpy as np
import pytest
from fastapi.testclient import TestClient

from stylebank import Tensor
from stylebank.images import ImageBuffer, label_map_from_png_bytes, label_map_to_png_bytes
from stylebank.model import StyleBankModel
from stylebank.service import ModelHolder, create_app


@pytest.fixture(scope="module")
def client():
    model = StyleBankModel.create(["vangogh", "picasso"], c_max=8, seed=5)
    return TestClient(create_app(ModelHolder(model), max_side=128), raise_server_exceptions=False)


def png_b64(seed=0, size=16) -> str:
    rng = np.random.default_rng(seed)
    tensor = Tensor(rng.uniform(0, 1, (1, 3, size, size)).astype(np.float32))
    return base64.b64encode(ImageBuffer.from_tensor(tensor).to_png_bytes()).decode()


class TestHealthAndInventory:
    def test_healthz(self, client):
        assert client.get("/healthz").status_code == 200

    def test_styles_lists_two_entries(self, client):
        body = client.get("/styles").json()
        assert body == {
            "styles": [
                {"name": "vangogh", "kernel_size": 3},
                {"name": "picasso", "kernel_size": 3},
            ]
        }


class TestStylize:
    def test_round_trip_dims(self, client):
        resp = client.post("/stylize", json={"image": png_b64(), "style": "vangogh"})
        assert resp.status_code == 200
        out = ImageBuffer.from_png_bytes(base64.b64decode(resp.json()["image"]))
        assert out.size == (16, 16)

    def test_non_multiple_of_4_dims_work(self, client):
        rng = np.random.default_rng(3)
        buf = ImageBuffer((rng.uniform(0, 1, (18, 22, 3)) * 255).astype(np.uint8))
        b64 = base64.b64encode(buf.to_png_bytes()).decode()
        resp = client.post("/stylize", json={"image": b64, "style": "vangogh"})
        assert resp.status_code == 200
        out = ImageBuffer.from_png_bytes(base64.b64decode(resp.json()["image"]))
        assert out.size == (18, 22)

    def test_unknown_style_404(self, client):
        resp = client.post("/stylize", json={"image": png_b64(), "style": "nope"})
        assert resp.status_code == 404

    def test_malformed_json_400(self, client):
        resp = client.post("/stylize", content=b"not json",
                           headers={"content-type": "application/json"})
        assert resp.status_code == 400

    def test_bad_base64_400(self, client):
        resp = client.post("/stylize", json={"image": "@@@", "style": "vangogh"})
        assert resp.status_code == 400

    def test_missing_field_400(self, client):
        assert client.post("/stylize", json={"style": "vangogh"}).status_code == 400

    def test_oversized_image_413(self, client):
        resp = client.post("/stylize", json={"image": png_b64(size=256), "style": "vangogh"})
        assert resp.status_code == 413

    def test_identical_requests_identical_responses(self, client):
        body = {"image": png_b64(seed=7), "style": "picasso"}
        a = client.post("/stylize", json=body).json()["image"]
        b = client.post("/stylize", json=body).json()["image"]
        assert a == b


class TestFuse:
    def test_one_hot_equals_stylize_byte_identical(self, client):
        image = png_b64(seed=8)
        direct = client.post("/stylize", json={"image": image, "style": "vangogh"})
        fused = client.post("/fuse", json={
            "image": image, "weights": {"vangogh": 1.0, "picasso": 0.0},
        })
        assert fused.status_code == 200
        assert fused.json()["image"] == direct.json()["image"]

    def test_unnormalized_weights_accepted(self, client):
        resp = client.post("/fuse", json={
            "image": png_b64(seed=9), "weights": {"vangogh": 3.0, "picasso": 7.0},
        })
        assert resp.status_code == 200

    def test_unknown_style_404(self, client):
        resp = client.post("/fuse", json={"image": png_b64(), "weights": {"nope": 1.0}})
        assert resp.status_code == 404

    def test_zero_weights_400(self, client):
        resp = client.post("/fuse", json={
            "image": png_b64(), "weights": {"vangogh": 0.0, "picasso": 0.0},
        })
        assert resp.status_code == 400

    def test_non_numeric_weight_400(self, client):
        resp = client.post("/fuse", json={
            "image": png_b64(), "weights": {"vangogh": "lots"},
        })
        assert resp.status_code == 400


class TestSegmentAndRegions:
    def test_segment_returns_label_map_at_image_resolution(self, client):
        resp = client.post("/segment", json={"image": png_b64(seed=10), "k": 3})
        assert resp.status_code == 200
        body = resp.json()
        assert body["k"] == 3
        labels = label_map_from_png_bytes(base64.b64decode(body["labels"]))
        assert labels.shape == (16, 16)
        assert set(np.unique(labels)) <= {0, 1, 2}

    def test_segment_bad_k_400(self, client):
        assert client.post("/segment", json={"image": png_b64(), "k": 0}).status_code == 400
        assert client.post("/segment", json={"image": png_b64(), "k": "four"}).status_code == 400

    def test_k1_then_fuse_regions_equals_stylize(self, client):
        image = png_b64(seed=11)
        seg = client.post("/segment", json={"image": image, "k": 1}).json()
        fused = client.post("/fuse-regions", json={
            "image": image, "labels": seg["labels"], "assignment": {"0": "picasso"},
        })
        direct = client.post("/stylize", json={"image": image, "style": "picasso"})
        assert fused.status_code == 200
        assert fused.json()["image"] == direct.json()["image"]

    def test_incomplete_assignment_422(self, client):
        image = png_b64(seed=12)
        seg = client.post("/segment", json={"image": image, "k": 3}).json()
        labels = label_map_from_png_bytes(base64.b64decode(seg["labels"]))
        present = np.unique(labels)
        if len(present) < 2:
            pytest.skip("segmentation collapsed to one region")
        resp = client.post("/fuse-regions", json={
            "image": image, "labels": seg["labels"],
            "assignment": {str(int(present[0])): "vangogh"},
        })
        assert resp.status_code == 422

    def test_label_map_size_mismatch_422(self, client):
        image = png_b64(seed=13)
        wrong = label_map_to_png_bytes(np.zeros((8, 8), dtype=np.uint8))
        resp = client.post("/fuse-regions", json={
            "image": image,
            "labels": base64.b64encode(wrong).decode(),
            "assignment": {"0": "vangogh"},
        })
        assert resp.status_code == 422

    def test_unknown_assigned_style_404(self, client):
        image = png_b64(seed=14)
        seg = client.post("/segment", json={"image": image, "k": 1}).json()
        resp = client.post("/fuse-regions", json={
            "image": image, "labels": seg["labels"], "assignment": {"0": "nope"},
        })
        assert resp.status_code == 404

    def test_bad_assignment_key_400(self, client):
        image = png_b64(seed=15)
        seg = client.post("/segment", json={"image": image, "k": 1}).json()
        resp = client.post("/fuse-regions", json={
            "image": image, "labels": seg["labels"], "assignment": {"zero": "vangogh"},
        })
        assert resp.status_code == 400
