import hashlib
import io
import json
import tarfile
import warnings
import zipfile

import pytest

from conftest import zip_dataset
from scoremeta import installer
from scoremeta.definitions import FrameworkConfig, load_definitions
from scoremeta.installer import (InstallError, download, install, run_post_process, unpack,
                                 verify)


def serve_collection(collection, base_url, www, defs_dir, *, checksum=True, prefix=""):
    """Archive every fixture dataset into ``www`` and write definitions pointing there."""
    defs_dir.mkdir(exist_ok=True)
    for path in sorted(collection.definitions.glob("*.json")):
        doc = json.loads(path.read_text())
        name = doc["name"]
        archive = zip_dataset(collection.install_dir / name, www / f"{name}.zip", prefix)
        doc["install"] = {"url": f"{base_url}/{name}.zip", "unpack": "zip"}
        if prefix:
            doc["install"]["post_process"] = [
                {"op": "move", "src": f"{prefix}*", "dst": "."},
                {"op": "delete", "path": prefix.rstrip("/")}]
        if checksum:
            doc["install"]["checksum"] = {
                "algorithm": "sha256", "value": hashlib.sha256(archive.read_bytes()).hexdigest()}
        (defs_dir / path.name).write_text(json.dumps(doc))
    return load_definitions([defs_dir])


@pytest.fixture(autouse=True)
def fast_backoff(monkeypatch):
    monkeypatch.setattr(installer, "BACKOFF_SECONDS", 0.0)
    monkeypatch.setattr(installer.download, "__defaults__",
                        (installer.DOWNLOAD_RETRIES, 0.0, 10.0))


def all_song_paths(defs):
    return [rel for d in defs for s in d.songs for rel in s.all_paths()]


def test_install_from_local_server(collection, http_server, tmp_path):
    base, www, _ = http_server
    defs = serve_collection(collection, base, www, tmp_path / "defs")
    cfg = FrameworkConfig(tmp_path / "install")
    report = install([d.name for d in defs], cfg, defs)
    assert [r.status for r in report.results] == ["installed"] * 3
    for rel in all_song_paths(defs):
        assert cfg.resolve(rel).is_file(), rel
        assert cfg.resolve(rel).read_bytes() == (collection.install_dir / rel).read_bytes()
    # no staging leftovers
    assert sorted(p.name for p in cfg.install_dir.iterdir()) == sorted(d.name for d in defs)


def test_install_is_idempotent(collection, http_server, tmp_path):
    base, www, server = http_server
    defs = serve_collection(collection, base, www, tmp_path / "defs")
    cfg = FrameworkConfig(tmp_path / "install")
    install(["PianoSolo"], cfg, defs)
    n_requests = len(server.requests)
    again = install(["PianoSolo"], cfg, defs)
    assert again.status("PianoSolo") == "skipped" and again.ok
    assert len(server.requests) == n_requests


def test_empty_request():
    assert install([], FrameworkConfig("/nonexistent"), []).results == []


def test_unknown_dataset(tmp_path):
    with pytest.raises(InstallError, match="Nope"):
        install(["Nope"], FrameworkConfig(tmp_path), [])


def test_checksum_mismatch_leaves_nothing(collection, http_server, tmp_path):
    base, www, _ = http_server
    defs = serve_collection(collection, base, www, tmp_path / "defs")
    (www / "Chamber.zip").write_bytes((www / "Chamber.zip").read_bytes()[:-10] + b"corrupted!")
    cfg = FrameworkConfig(tmp_path / "install")
    report = install(["Chamber", "PianoSolo"], cfg, defs)
    assert report.status("Chamber") == "failed" and "mismatch" in report.results[0].message
    assert report.status("PianoSolo") == "installed"
    assert not report.ok
    assert not (cfg.install_dir / "Chamber").exists()
    assert sorted(p.name for p in cfg.install_dir.iterdir()) == ["PianoSolo"]


def test_missing_checksum_warns(collection, http_server, tmp_path):
    base, www, _ = http_server
    defs = serve_collection(collection, base, www, tmp_path / "defs", checksum=False)
    with pytest.warns(UserWarning, match="no checksum"):
        report = install(["Stems"], FrameworkConfig(tmp_path / "install"), defs, max_workers=1)
    assert report.ok


def test_post_process_moves_nested_tree(collection, http_server, tmp_path):
    base, www, _ = http_server
    defs = serve_collection(collection, base, www, tmp_path / "defs", prefix="release-1.0/")
    cfg = FrameworkConfig(tmp_path / "install")
    assert install(["Stems"], cfg, defs).ok
    assert verify(next(d for d in defs if d.name == "Stems"), cfg).ok
    assert not (cfg.install_dir / "Stems" / "release-1.0").exists()


def test_download_failure_is_reported(collection, http_server, tmp_path):
    base, www, _ = http_server
    defs = serve_collection(collection, base, www, tmp_path / "defs")
    (www / "Stems.zip").unlink()
    report = install(["Stems"], FrameworkConfig(tmp_path / "install"), defs)
    assert report.status("Stems") == "failed"
    assert not (tmp_path / "install" / "Stems").exists()


def test_retry_after_server_errors(http_server, tmp_path):
    base, www, server = http_server
    (www / "f.bin").write_bytes(b"x" * 1000)
    server.failures_left = 2
    out = download(f"{base}/f.bin", tmp_path / "f.bin", retries=3, backoff=0)
    assert out.read_bytes() == b"x" * 1000
    server.failures_left = 5
    with pytest.raises(InstallError):
        download(f"{base}/f.bin", tmp_path / "g.bin", retries=3, backoff=0)


def test_resume_uses_range(http_server, tmp_path):
    base, www, server = http_server
    data = bytes(range(256)) * 40
    (www / "f.bin").write_bytes(data)
    dest = tmp_path / "f.bin"
    dest.write_bytes(data[:1000])
    download(f"{base}/f.bin", dest)
    assert dest.read_bytes() == data
    assert server.requests[-1] == ("/f.bin", "bytes=1000-")


def test_refuses_non_http(tmp_path):
    with pytest.raises(InstallError):
        download("file:///etc/passwd", tmp_path / "x")


def test_zip_traversal_rejected(tmp_path):
    archive = tmp_path / "evil.zip"
    with zipfile.ZipFile(archive, "w") as zf:
        zf.writestr("../escape.txt", "x")
    with pytest.raises(InstallError, match="escapes"):
        unpack(archive, "zip", tmp_path / "out")
    assert not (tmp_path / "escape.txt").exists()


def test_tar_traversal_rejected(tmp_path):
    archive = tmp_path / "evil.tar.gz"
    with tarfile.open(archive, "w:gz") as tf:
        info = tarfile.TarInfo("../escape.txt")
        info.size = 1
        tf.addfile(info, io.BytesIO(b"x"))
    with pytest.raises(InstallError):
        unpack(archive, "tar-gzip", tmp_path / "out")
    assert not (tmp_path / "escape.txt").exists()


def test_tar_round_trip(tmp_path):
    src = tmp_path / "src"
    src.mkdir()
    (src / "a.txt").write_text("hello")
    archive = tmp_path / "a.tar.gz"
    with tarfile.open(archive, "w:gz") as tf:
        tf.add(src / "a.txt", "inner/a.txt")
    unpack(archive, "tar-gzip", tmp_path / "out")
    assert (tmp_path / "out" / "inner" / "a.txt").read_text() == "hello"


def test_post_process_ops(tmp_path):
    root = tmp_path / "d"
    (root / "x").mkdir(parents=True)
    (root / "x" / "a.wav").write_text("a")
    (root / "x" / "b.wav").write_text("b")
    (root / "junk").write_text("j")
    inner = root / "inner.zip"
    with zipfile.ZipFile(inner, "w") as zf:
        zf.writestr("c.txt", "c")
    run_post_process(root, [
        {"op": "move", "src": "x/*.wav", "dst": "."},
        {"op": "rename", "src": "x", "dst": "empty"},
        {"op": "delete", "path": "junk"},
        {"op": "unpack", "path": "inner.zip", "kind": "zip", "dst": "unz"},
    ])
    assert sorted(p.name for p in root.iterdir()) == ["a.wav", "b.wav", "empty", "unz"]
    assert (root / "unz" / "c.txt").read_text() == "c"
    with pytest.raises(InstallError):
        run_post_process(root, [{"op": "delete", "path": "../outside"}])
    with pytest.raises(InstallError, match="nothing matches"):
        run_post_process(root, [{"op": "move", "src": "nope*", "dst": "."}])


def test_shell_steps_need_opt_in(collection, http_server, tmp_path):
    base, www, _ = http_server
    defs_dir = tmp_path / "defs"
    serve_collection(collection, base, www, defs_dir)
    doc = json.loads((defs_dir / "Stems.json").read_text())
    doc["install"]["shell"] = ["echo done > shell_marker.txt"]
    (defs_dir / "Stems.json").write_text(json.dumps(doc))
    defs = load_definitions([defs_dir])
    cfg = FrameworkConfig(tmp_path / "install")
    denied = install(["Stems"], cfg, defs)
    assert denied.status("Stems") == "failed" and "shell" in denied.results[0].message
    assert not (cfg.install_dir / "Stems").exists()
    allowed = install(["Stems"], cfg, defs, allow_shell=True)
    assert allowed.status("Stems") == "installed"
    assert (cfg.install_dir / "Stems" / "shell_marker.txt").read_text().strip() == "done"


def test_decompress_dir_is_used_and_cleaned(collection, http_server, tmp_path):
    base, www, _ = http_server
    defs = serve_collection(collection, base, www, tmp_path / "defs")
    dl = tmp_path / "downloads"
    cfg = FrameworkConfig(tmp_path / "install", decompress_dir=dl)
    assert install(["PianoSolo"], cfg, defs).ok
    assert dl.is_dir() and list(dl.iterdir()) == []


# verify

def test_verify_intact_and_missing(fresh_collection):
    defs = {d.name: d for d in load_definitions([fresh_collection.definitions])}
    cfg = FrameworkConfig(fresh_collection.install_dir)
    assert verify(defs["Stems"], cfg).missing == []
    rec = defs["Stems"].songs[1].recording_paths[2]
    cfg.resolve(rec).unlink()
    assert verify(defs["Stems"], cfg).missing == [rec]


def test_verify_not_installed(tmp_path, collection):
    defs = load_definitions([collection.definitions])
    with pytest.raises(InstallError, match="not installed"):
        verify(defs[0], FrameworkConfig(tmp_path))


def test_verify_zero_songs_warns(tmp_path):
    from scoremeta.definitions import official_definitions_dir
    d = next(x for x in load_definitions([official_definitions_dir()]) if x.name == "Bach10")
    (tmp_path / "Bach10").mkdir()
    with pytest.warns(UserWarning, match="no songs"):
        report = verify(d, FrameworkConfig(tmp_path))
    assert report.ok and report.n_checked == 0


def test_no_dataset_content_shipped():
    from scoremeta.definitions import official_definitions_dir
    files = {p.suffix for p in official_definitions_dir().iterdir()}
    assert files == {".json"}
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        for d in load_definitions([official_definitions_dir()]):
            assert d.install.url.startswith(("http://", "https://"))
