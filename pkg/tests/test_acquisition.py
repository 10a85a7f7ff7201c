import io
import json
import zipfile

import pytest

from ivrepro.acquisition import (classify_repository, extract_study_info,
                                 fetch_package, manifest_from_directory,
                                 verify_manifest)
from ivrepro.errors import NoRepositoryUrl, RetrievalFailed

RUEDA_TEXT = """Small Aggregates, Big Manipulation: Vote Buying Enforcement and Collective Monitoring
Miguel R. Rueda
American Journal of Political Science, 2017

Abstract: Polling station size and vote buying in Colombia.

Data Availability Statement: Replication materials are available at
http://dx.doi.org/10.7910/DVN/K6ZOOW in the AJPS Dataverse.
"""


class MockTransport:
    def __init__(self, routes):
        self.routes = routes
        self.calls = []

    def get(self, url):
        self.calls.append(url)
        for key, val in self.routes.items():
            if key in url:
                return 200, val
        return 404, b"not found"


class TestExtractStudyInfo:
    def test_rueda_fixture(self):
        info = extract_study_info(RUEDA_TEXT)
        assert info.replication_url.endswith("10.7910/DVN/K6ZOOW")
        assert info.year == "2017"
        assert info.journal == "American Journal of Political Science"
        assert info.title.startswith("Small Aggregates")
        assert info.authors == "Miguel R. Rueda"

    def test_no_url_raises(self):
        with pytest.raises(NoRepositoryUrl):
            extract_study_info("A paper with no links, published 2019.")

    def test_availability_section_wins_over_footnote_url(self):
        text = ("A Title Long Enough Here\n"
                "Author Name\n"
                "Footnote: code at https://github.com/alice/unrelated-tool\n"
                "\nData Availability: materials at "
                "https://doi.org/10.7910/DVN/ABCDEF .\n")
        info = extract_study_info(text)
        assert "10.7910/DVN/ABCDEF" in info.replication_url

    def test_fallback_to_first_repository_like_url(self):
        text = ("Title Of This Paper Here\nAuthors\n"
                "See https://example.org/random and also "
                "https://github.com/alice/repl for materials.\n")
        info = extract_study_info(text)
        assert info.replication_url == "https://github.com/alice/repl"

    def test_incomplete_metadata_is_not_fatal(self):
        info = extract_study_info(
            "x\nhttps://osf.io/ab12c/\n")
        assert info.replication_url == "https://osf.io/ab12c/"
        assert info.journal == "" and info.year == ""


class TestClassifyRepository:
    @pytest.mark.parametrize("url,kind,ident", [
        ("http://dx.doi.org/10.7910/DVN/K6ZOOW", "dataverse", "10.7910/DVN/K6ZOOW"),
        ("https://doi.org/10.7910/DVN/ABC123", "dataverse", "10.7910/DVN/ABC123"),
        ("https://dataverse.harvard.edu/dataset.xhtml?persistentId=doi:10.7910/DVN/XYZ",
         "dataverse", "10.7910/DVN/XYZ"),
        ("https://github.com/alice/repl", "github", "alice/repl"),
        ("https://github.com/alice/repl/tree/main/code", "github", "alice/repl"),
        ("https://osf.io/ab12c/", "osf", "ab12c"),
        ("https://example.org/files.zip", "http", "https://example.org/files.zip"),
    ])
    def test_classification(self, url, kind, ident):
        ref = classify_repository(url)
        assert (ref.kind, ref.identifier) == (kind, ident)

    def test_total_and_pure(self):
        url = "https://github.com/alice/repl"
        assert classify_repository(url) == classify_repository(url)

    def test_canonical_roundtrip(self):
        ref = classify_repository("http://dx.doi.org/10.7910/DVN/K6ZOOW")
        assert classify_repository(ref.canonical_url()) == ref


class TestFetchPackage:
    def dataverse_routes(self):
        listing = json.dumps({"data": [
            {"label": "analysis.do", "dataFile": {"id": 1, "filename": "analysis.do"}},
            {"label": "data.csv", "directoryLabel": "data",
             "dataFile": {"id": 2, "filename": "data.csv"}},
        ]}).encode()
        return {"versions/:latest-published/files": listing,
                "datafile/1": b"reg y x\n",
                "datafile/2": b"y,x\n1,2\n"}

    def test_dataverse_two_files(self, tmp_path):
        ref = classify_repository("https://doi.org/10.7910/DVN/TEST1")
        man = fetch_package(ref, tmp_path, transport=MockTransport(self.dataverse_routes()))
        assert [e["path"] for e in man.entries] == ["analysis.do", "data/data.csv"]
        assert (tmp_path / "data/data.csv").read_bytes() == b"y,x\n1,2\n"
        assert man.version_note == "latest-published"

    def test_github_zip_expanded(self, tmp_path):
        buf = io.BytesIO()
        with zipfile.ZipFile(buf, "w") as zf:
            zf.writestr("repo-HEAD/code/run.do", "reg y x\n")
            zf.writestr("repo-HEAD/data/d.csv", "a,b\n1,2\n")
        ref = classify_repository("https://github.com/alice/repo")
        man = fetch_package(ref, tmp_path,
                            transport=MockTransport({"archive/HEAD.zip": buf.getvalue()}))
        assert (tmp_path / "code/run.do").exists()
        assert (tmp_path / "data/d.csv").exists()
        assert len(man.entries) == 2

    def test_404_raises_with_manual_hint(self, tmp_path):
        ref = classify_repository("https://doi.org/10.7910/DVN/GONE")
        with pytest.raises(RetrievalFailed) as exc:
            fetch_package(ref, tmp_path, transport=MockTransport({}))
        assert exc.value.status == 404
        assert "--package-dir" in str(exc.value)

    def test_corrupted_byte_flips_verification(self, tmp_path):
        ref = classify_repository("https://doi.org/10.7910/DVN/TEST1")
        man = fetch_package(ref, tmp_path, transport=MockTransport(self.dataverse_routes()))
        assert verify_manifest(man, tmp_path)
        target = tmp_path / "analysis.do"
        data = bytearray(target.read_bytes())
        data[0] ^= 0xFF
        target.write_bytes(bytes(data))
        with pytest.raises(RetrievalFailed):
            verify_manifest(man, tmp_path)

    def test_osf_listing(self, tmp_path):
        listing = json.dumps({"data": [
            {"attributes": {"kind": "file", "name": "run.R",
                            "materialized_path": "/run.R"},
             "links": {"download": "https://osf.io/download/abc"}},
        ]}).encode()
        ref = classify_repository("https://osf.io/ab12c/")
        man = fetch_package(ref, tmp_path, transport=MockTransport({
            "files/osfstorage": listing, "download/abc": b"x <- 1\n"}))
        assert man.entries[0]["path"] == "run.R"

    def test_http_single_file(self, tmp_path):
        ref = classify_repository("https://example.org/materials.csv")
        man = fetch_package(ref, tmp_path,
                            transport=MockTransport({"materials.csv": b"a,b\n"}))
        assert (tmp_path / "materials.csv").exists()

    def test_manual_supply_manifest(self, tmp_path):
        src = tmp_path / "pkg"
        (src / "sub").mkdir(parents=True)
        (src / "a.do").write_text("reg y x\n")
        (src / "sub" / "b.csv").write_text("y,x\n")
        dest = tmp_path / "raw"
        man = manifest_from_directory(src, dest)
        assert [e["path"] for e in man.entries] == ["a.do", "sub/b.csv"]
        assert verify_manifest(man, dest)
