import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from mixassist import synth
from mixassist.audio import wav_bytes, write_wav
from mixassist.service import create_app


def _wait_job(client, jid, timeout=60.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        doc = client.get(f"/api/jobs/{jid}").json()
        if doc["state"] in ("done", "failed", "cancelled"):
            return doc
        time.sleep(0.05)
    raise TimeoutError("job never finished")


@pytest.fixture
def client(tmp_path):
    preset_dir = tmp_path / "presets"
    preset_dir.mkdir(parents=True)
    write_wav(synth.make_preset_song(2, duration_s=6.0), preset_dir / "demo_song.wav")
    app = create_app(tmp_path)
    with TestClient(app) as c:
        yield c


@pytest.fixture
def stems():
    rng = np.random.default_rng(0)
    return synth.make_stem_session(rng, 3, 4.0)


def _upload(client, sid, buf, name, muted=False):
    return client.post(
        f"/api/sessions/{sid}/tracks",
        files={"file": (f"{name}.wav", wav_bytes(buf), "audio/wav")},
        data={"muted": "true" if muted else "false", "name": name},
    )


@pytest.fixture
def populated(client, stems):
    sid = client.post("/api/sessions", json={}).json()["id"]
    for i, stem in enumerate(stems):
        assert _upload(client, sid, stem, f"stem{i}").status_code == 200
    client.put(f"/api/sessions/{sid}/segment", json={"start_s": 0.5, "end_s": 2.5})
    client.put(
        f"/api/sessions/{sid}/reference",
        json={"kind": "preset", "locator": "demo_song",
              "segment": {"start_s": 0.0, "end_s": 3.0}},
    )
    return sid


class TestSessions:
    def test_create_and_get(self, client):
        doc = client.post("/api/sessions", json={}).json()
        assert doc["version"] == 0
        got = client.get(f"/api/sessions/{doc['id']}").json()
        assert got["id"] == doc["id"]
        assert got["tracks"] == []

    def test_unknown_session_404(self, client):
        assert client.get("/api/sessions/zzz").status_code == 404

    def test_upload_and_patch(self, client, stems):
        sid = client.post("/api/sessions", json={}).json()["id"]
        r = _upload(client, sid, stems[0], "drum")
        tid = r.json()["track_ids"][0]
        doc = client.get(f"/api/sessions/{sid}").json()
        assert doc["tracks"][0]["name"] == "drum"
        assert doc["tracks"][0]["duration_s"] == pytest.approx(4.0, abs=0.01)
        r = client.patch(
            f"/api/sessions/{sid}/tracks/{tid}", json={"muted": True, "name": "kick"}
        )
        assert r.status_code == 200
        doc = client.get(f"/api/sessions/{sid}").json()
        assert doc["tracks"][0]["muted"] is True
        assert doc["tracks"][0]["name"] == "kick"

    def test_21st_active_track_rejected(self, client):
        sid = client.post("/api/sessions", json={}).json()["id"]
        quiet = synth.make_stem(np.random.default_rng(1), "pad", 1.0)
        for i in range(20):
            assert _upload(client, sid, quiet, f"t{i}").status_code == 200
        r = _upload(client, sid, quiet, "t20")
        assert r.status_code == 400
        assert "20" in r.json()["detail"]
        # muted uploads are still fine
        assert _upload(client, sid, quiet, "muted_ref", muted=True).status_code == 200

    def test_unmute_past_capacity_rejected(self, client):
        sid = client.post("/api/sessions", json={}).json()["id"]
        quiet = synth.make_stem(np.random.default_rng(1), "pad", 1.0)
        for i in range(20):
            _upload(client, sid, quiet, f"t{i}")
        tid = _upload(client, sid, quiet, "extra", muted=True).json()["track_ids"][0]
        r = client.patch(f"/api/sessions/{sid}/tracks/{tid}", json={"muted": False})
        assert r.status_code == 400

    def test_version_conflict_409(self, client, stems):
        sid = client.post("/api/sessions", json={}).json()["id"]
        _upload(client, sid, stems[0], "a")
        r = client.put(
            f"/api/sessions/{sid}/segment",
            json={"start_s": 0.0, "end_s": 1.0, "version": 0},  # stale
        )
        assert r.status_code == 409
        r = client.put(
            f"/api/sessions/{sid}/segment",
            json={"start_s": 0.0, "end_s": 1.0, "version": 1},
        )
        assert r.status_code == 200


class TestReference:
    def test_muted_track_reference(self, client, stems):
        sid = client.post("/api/sessions", json={}).json()["id"]
        _upload(client, sid, stems[0], "a")
        tid = _upload(client, sid, stems[1], "ref", muted=True).json()["track_ids"][0]
        r = client.put(
            f"/api/sessions/{sid}/reference",
            json={"kind": "muted_track", "locator": tid,
                  "segment": {"start_s": 0.0, "end_s": 2.0}},
        )
        assert r.status_code == 200

    def test_active_track_reference_rejected(self, client, stems):
        sid = client.post("/api/sessions", json={}).json()["id"]
        tid = _upload(client, sid, stems[0], "a").json()["track_ids"][0]
        r = client.put(
            f"/api/sessions/{sid}/reference",
            json={"kind": "muted_track", "locator": tid,
                  "segment": {"start_s": 0.0, "end_s": 2.0}},
        )
        assert r.status_code == 400

    def test_presets_listed_and_validated(self, client):
        names = client.get("/api/presets").json()["presets"]
        assert names == ["demo_song"]
        sid = client.post("/api/sessions", json={}).json()["id"]
        r = client.put(
            f"/api/sessions/{sid}/reference",
            json={"kind": "preset", "locator": "demo_song",
                  "segment": {"start_s": 0.0, "end_s": 2.0}},
        )
        assert r.status_code == 200
        r = client.put(
            f"/api/sessions/{sid}/reference",
            json={"kind": "preset", "locator": "nope",
                  "segment": {"start_s": 0.0, "end_s": 2.0}},
        )
        assert r.status_code == 404


class TestAssist:
    def test_missing_segment_blocks(self, client, stems):
        sid = client.post("/api/sessions", json={}).json()["id"]
        _upload(client, sid, stems[0], "a")
        client.put(
            f"/api/sessions/{sid}/reference",
            json={"kind": "preset", "locator": "demo_song",
                  "segment": {"start_s": 0.0, "end_s": 2.0}},
        )
        r = client.post(f"/api/sessions/{sid}/assist", json={"mode": "optimize"})
        assert r.status_code == 400
        assert "section" in r.json()["detail"]

    def test_missing_reference_blocks(self, client, stems):
        sid = client.post("/api/sessions", json={}).json()["id"]
        _upload(client, sid, stems[0], "a")
        client.put(f"/api/sessions/{sid}/segment", json={"start_s": 0.0, "end_s": 2.0})
        r = client.post(f"/api/sessions/{sid}/assist", json={"mode": "optimize"})
        assert r.status_code == 400

    def test_optimize_job_lifecycle(self, client, populated):
        sid = populated
        r = client.post(
            f"/api/sessions/{sid}/assist", json={"mode": "optimize", "steps": 4}
        )
        jid = r.json()["job_id"]
        doc = _wait_job(client, jid)
        assert doc["state"] == "done"
        assert doc["progress"] == 1.0
        assert len(doc["result"]["theta"]) == 3 * 20 + 19
        assert len(doc["result"]["loss_trace"]) == 4
        params = client.get(f"/api/sessions/{sid}/params").json()["params"]
        assert params is not None and len(params["strips"]) == 3

    def test_neural_job(self, client, populated):
        sid = populated
        r = client.post(f"/api/sessions/{sid}/assist", json={"mode": "neural"})
        doc = _wait_job(client, r.json()["job_id"])
        assert doc["state"] == "done"
        assert len(doc["result"]["theta"]) == 79

    def test_cancel(self, client, populated):
        sid = populated
        r = client.post(
            f"/api/sessions/{sid}/assist", json={"mode": "optimize", "steps": 500}
        )
        jid = r.json()["job_id"]
        client.post(f"/api/jobs/{jid}/cancel")
        doc = _wait_job(client, jid)
        assert doc["state"] == "cancelled"

    def test_progress_monotone(self, client, populated):
        sid = populated
        r = client.post(
            f"/api/sessions/{sid}/assist", json={"mode": "optimize", "steps": 6}
        )
        jid = r.json()["job_id"]
        seen = []
        for _ in range(400):
            doc = client.get(f"/api/jobs/{jid}").json()
            seen.append(doc["progress"])
            if doc["state"] in ("done", "failed"):
                break
            time.sleep(0.02)
        assert doc["state"] == "done"
        assert all(b >= a for a, b in zip(seen, seen[1:]))

    def test_unknown_job_404(self, client):
        assert client.get("/api/jobs/nope").status_code == 404


class TestParamsAndRender:
    def test_params_roundtrip_exact(self, client, populated):
        sid = populated
        jid = client.post(
            f"/api/sessions/{sid}/assist", json={"mode": "neural"}
        ).json()["job_id"]
        _wait_job(client, jid)
        doc = client.get(f"/api/sessions/{sid}/params").json()
        params = doc["params"]
        params["strips"][0]["pan"] = 0.125
        r = client.put(f"/api/sessions/{sid}/params", json=params)
        assert r.status_code == 200
        back = client.get(f"/api/sessions/{sid}/params").json()["params"]
        assert back["strips"][0]["pan"] == 0.125
        assert back["strips"][1] == params["strips"][1]

    def test_out_of_range_params_rejected(self, client, populated):
        sid = populated
        from mixassist.params import neutral_params, params_to_dict

        doc = params_to_dict(neutral_params(3))
        doc["strips"][0]["gain_db"] = 500.0
        r = client.put(f"/api/sessions/{sid}/params", json=doc)
        assert r.status_code == 400

    def test_render_deterministic_and_editable(self, client, populated):
        sid = populated
        from mixassist.params import neutral_params, params_to_dict

        doc = params_to_dict(neutral_params(3))
        assert client.put(f"/api/sessions/{sid}/params", json=doc).status_code == 200
        r1 = client.post(f"/api/sessions/{sid}/render").json()
        r2 = client.post(f"/api/sessions/{sid}/render").json()
        assert r1["resource"] == r2["resource"]  # content-addressed, byte-identical
        wav1 = client.get(f"/api/audio/{r1['resource']}").content
        wav2 = client.get(f"/api/audio/{r2['resource']}").content
        assert wav1 == wav2
        # edit one pan and the render changes
        doc["strips"][0]["pan"] = 0.0
        client.put(f"/api/sessions/{sid}/params", json=doc)
        r3 = client.post(f"/api/sessions/{sid}/render").json()
        assert r3["resource"] != r1["resource"]
        # undo restores the previous bytes exactly
        doc["strips"][0]["pan"] = 0.5
        client.put(f"/api/sessions/{sid}/params", json=doc)
        r4 = client.post(f"/api/sessions/{sid}/render").json()
        assert r4["resource"] == r1["resource"]
        assert client.get(f"/api/audio/{r4['resource']}").content == wav1

    def test_audio_crop(self, client, populated):
        sid = populated
        rid = client.post(f"/api/sessions/{sid}/render").json()["resource"]
        full = client.get(f"/api/audio/{rid}").content
        crop = client.get(
            f"/api/audio/{rid}", params={"start_s": 0.0, "end_s": 1.0}
        ).content
        assert len(crop) < len(full)
        assert client.get("/api/audio/missing").status_code == 404

    def test_paramspec_endpoint(self, client):
        doc = client.get("/api/paramspec").json()
        assert len(doc["strip"]) == 20
        assert len(doc["master"]) == 19
        gain = doc["strip"][0]
        assert gain["min"] == -48.0 and gain["max"] == 12.0

    def test_uploads_content_addressed(self, client, stems, tmp_path):
        sid = client.post("/api/sessions", json={}).json()["id"]
        r1 = _upload(client, sid, stems[0], "a").json()
        r2 = _upload(client, sid, stems[0], "b").json()
        doc = client.get(f"/api/sessions/{sid}").json()
        resources = {t["resource"] for t in doc["tracks"]}
        assert len(resources) == 1  # same bytes, one stored copy
