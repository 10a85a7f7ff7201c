"""Study metadata extraction and replication-package retrieval.

Retrieval is strictly URL-first: the repository link comes from the paper's
availability statement (or, failing that, the first repository-like URL in
the document), never from keyword search.  If no URL can be extracted the
stage fails and the caller falls back to a manually supplied package.
"""
from __future__ import annotations

import hashlib
import io
import json
import re
import zipfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from urllib.parse import urlparse

from .errors import NoRepositoryUrl, RetrievalFailed

AVAILABILITY_HEADINGS = ("data availability", "replication", "supporting information")
SECTION_WINDOW = 2000          # chars scanned after a heading for the URL

URL_RE = re.compile(r"https?://[^\s<>\"\')\]]+")
REPO_HOST_RE = re.compile(
    r"(doi\.org|dx\.doi\.org|dataverse|github\.com|osf\.io)", re.IGNORECASE)
DVN_DOI_RE = re.compile(r"(10\.\d{4,9}/DVN/[A-Z0-9]+)", re.IGNORECASE)

KNOWN_JOURNALS = (
    "American Journal of Political Science",
    "American Political Science Review",
    "The Journal of Politics",
    "Journal of Politics",
)

DOWNLOAD_WORKERS = 4


@dataclass
class StudyInfo:
    title: str
    authors: str
    year: str
    journal: str
    replication_url: str

    def to_json_dict(self):
        return {"title": self.title, "authors": self.authors, "year": self.year,
                "journal": self.journal, "replication_url": self.replication_url}


@dataclass
class RepositoryRef:
    kind: str          # dataverse | github | osf | http
    identifier: str

    def canonical_url(self):
        if self.kind == "dataverse":
            return f"https://doi.org/{self.identifier}"
        if self.kind == "github":
            return f"https://github.com/{self.identifier}"
        if self.kind == "osf":
            return f"https://osf.io/{self.identifier}"
        return self.identifier


@dataclass
class PackageManifest:
    entries: list                  # [{"path", "size", "sha256"}]
    source: dict
    retrieved_at: str
    version_note: str = ""

    def to_json_dict(self):
        return {"entries": self.entries, "source": self.source,
                "retrieved_at": self.retrieved_at,
                "version_note": self.version_note}


def _clean_url(url):
    return url.rstrip(".,;:)]»’”")


def extract_study_info(paper_text: str) -> StudyInfo:
    """Pull metadata and the repository URL out of extracted paper text.

    The availability-section URL wins over any other URL in the document;
    missing metadata fields come back empty (a warning, not a failure), but a
    missing URL raises NoRepositoryUrl because retrieval must never guess.
    """
    if not paper_text or not paper_text.strip():
        raise NoRepositoryUrl("empty paper text")

    lower = paper_text.lower()
    url = None
    hits = []
    for heading in AVAILABILITY_HEADINGS:
        pos = lower.find(heading)
        if pos != -1:
            hits.append((pos, heading))
    for pos, _heading in sorted(hits):
        window = paper_text[pos:pos + SECTION_WINDOW]
        m = URL_RE.search(window)
        if m:
            url = _clean_url(m.group(0))
            break
    if url is None:
        for m in URL_RE.finditer(paper_text):
            candidate = _clean_url(m.group(0))
            if REPO_HOST_RE.search(candidate) or DVN_DOI_RE.search(candidate):
                url = candidate
                break
    if url is None:
        raise NoRepositoryUrl(
            "no repository URL found in the paper text; supply the package "
            "manually with --package-dir")

    lines = [ln.strip() for ln in paper_text.splitlines() if ln.strip()]
    title = next((ln for ln in lines if len(ln) >= 10), lines[0] if lines else "")
    idx = lines.index(title) if title in lines else -1
    authors = lines[idx + 1] if 0 <= idx < len(lines) - 1 else ""
    if URL_RE.search(authors):
        authors = ""

    journal = ""
    for j in KNOWN_JOURNALS:
        if j.lower() in lower:
            journal = j
            break

    year = ""
    ym = re.search(r"\b(19|20)\d{2}\b", paper_text)
    if ym:
        year = ym.group(0)

    return StudyInfo(title=title, authors=authors, year=year, journal=journal,
                     replication_url=url)


def classify_repository(url: str) -> RepositoryRef:
    """Deterministic platform classification; unknown hosts pass through."""
    parsed = urlparse(url if "://" in url else "https://" + url)
    host = parsed.netloc.lower()
    path = parsed.path.strip("/")

    m = DVN_DOI_RE.search(url)
    if m and (host in ("doi.org", "dx.doi.org") or "dataverse" in host or "doi" in host):
        return RepositoryRef(kind="dataverse", identifier=m.group(1))
    if "dataverse" in host:
        pm = re.search(r"persistentId=doi:([^&\s]+)", url)
        if pm:
            return RepositoryRef(kind="dataverse", identifier=pm.group(1))
    if host in ("doi.org", "dx.doi.org") and path.upper().find("DVN") != -1:
        return RepositoryRef(kind="dataverse", identifier=path)
    if host.endswith("github.com"):
        parts = path.split("/")
        if len(parts) >= 2:
            return RepositoryRef(kind="github", identifier="/".join(parts[:2]))
    if host.endswith("osf.io"):
        parts = path.split("/")
        if parts and parts[0]:
            return RepositoryRef(kind="osf", identifier=parts[0])
    return RepositoryRef(kind="http", identifier=url)


# --------------------------------------------------------------------------
# transports

class HttpTransport:
    """Thin wrapper so tests can inject fakes: get(url) -> (status, bytes)."""

    def __init__(self, timeout=60):
        self.timeout = timeout

    def get(self, url):
        import requests
        resp = requests.get(url, timeout=self.timeout)
        return resp.status_code, resp.content


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _safe_join(dest: Path, relative: str) -> Path:
    rel = Path(relative.replace("\\", "/"))
    if rel.is_absolute() or ".." in rel.parts:
        raise RetrievalFailed(f"unsafe path in package: {relative}")
    return dest / rel


def _expand_zip(data: bytes, dest: Path) -> list:
    """Unzip into dest, stripping a single shared top-level directory."""
    entries = []
    with zipfile.ZipFile(io.BytesIO(data)) as zf:
        names = [n for n in zf.namelist() if not n.endswith("/")]
        roots = {n.split("/", 1)[0] for n in names if "/" in n}
        strip = roots.pop() + "/" if len(roots) == 1 and all("/" in n for n in names) else ""
        for name in names:
            rel = name[len(strip):] if name.startswith(strip) else name
            if not rel:
                continue
            content = zf.read(name)
            target = _safe_join(dest, rel)
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_bytes(content)
            entries.append({"path": rel, "size": len(content),
                            "sha256": _sha256(content)})
    return entries


def _download_many(files, dest, transport):
    """files: [(relative_path, url)]; bounded-parallel download, serial manifest."""
    def fetch(item):
        rel, url = item
        status, content = transport.get(url)
        if status != 200:
            raise RetrievalFailed(
                f"HTTP {status} downloading {url}; if the repository is gone, "
                f"supply the package manually with --package-dir", status=status)
        return rel, content

    with ThreadPoolExecutor(max_workers=DOWNLOAD_WORKERS) as pool:
        results = list(pool.map(fetch, files))
    entries = []
    for rel, content in sorted(results):
        target = _safe_join(dest, rel)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(content)
        entries.append({"path": rel, "size": len(content),
                        "sha256": _sha256(content)})
    return entries


def _fetch_dataverse(ref, dest, transport, api_base="https://dataverse.harvard.edu"):
    listing_url = (f"{api_base}/api/datasets/:persistentId/versions/"
                   f":latest-published/files?persistentId=doi:{ref.identifier}")
    status, content = transport.get(listing_url)
    if status != 200:
        raise RetrievalFailed(
            f"HTTP {status} from Dataverse listing; supply the package manually "
            f"with --package-dir", status=status)
    data = json.loads(content.decode("utf-8"))
    files = []
    for item in data.get("data", []):
        df = item.get("dataFile", {})
        fid = df.get("id")
        name = df.get("filename") or item.get("label")
        directory = item.get("directoryLabel", "")
        rel = f"{directory}/{name}" if directory else name
        files.append((rel, f"{api_base}/api/access/datafile/{fid}"))
    entries = _download_many(files, dest, transport)
    return entries, "latest-published"


def _fetch_github(ref, dest, transport):
    url = f"https://github.com/{ref.identifier}/archive/HEAD.zip"
    status, content = transport.get(url)
    if status != 200:
        raise RetrievalFailed(
            f"HTTP {status} downloading GitHub archive; supply the package "
            f"manually with --package-dir", status=status)
    return _expand_zip(content, dest), "HEAD"


def _fetch_osf(ref, dest, transport, listing_url=None):
    url = listing_url or (f"https://api.osf.io/v2/nodes/{ref.identifier}"
                          f"/files/osfstorage/?format=json")
    status, content = transport.get(url)
    if status != 200:
        raise RetrievalFailed(
            f"HTTP {status} from OSF listing; supply the package manually "
            f"with --package-dir", status=status)
    data = json.loads(content.decode("utf-8"))
    files = []
    folders = []
    for item in data.get("data", []):
        attrs = item.get("attributes", {})
        if attrs.get("kind") == "folder":
            nested = (item.get("relationships", {}).get("files", {})
                      .get("links", {}).get("related", {}).get("href"))
            if nested:
                folders.append(nested)
            continue
        name = attrs.get("materialized_path", attrs.get("name", "")).lstrip("/")
        link = item.get("links", {}).get("download")
        if name and link:
            files.append((name, link))
    entries = _download_many(files, dest, transport)
    for nested in folders:
        sub, _ = _fetch_osf(ref, dest, transport, listing_url=nested)
        entries.extend(sub)
    return entries, "osfstorage"


def _fetch_http(ref, dest, transport):
    status, content = transport.get(ref.identifier)
    if status != 200:
        raise RetrievalFailed(
            f"HTTP {status} downloading {ref.identifier}; supply the package "
            f"manually with --package-dir", status=status)
    name = Path(urlparse(ref.identifier).path).name or "download"
    if name.lower().endswith(".zip") or content[:2] == b"PK":
        return _expand_zip(content, dest), "direct"
    target = _safe_join(dest, name)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_bytes(content)
    return [{"path": name, "size": len(content), "sha256": _sha256(content)}], "direct"


def fetch_package(ref: RepositoryRef, dest, transport=None) -> PackageManifest:
    """Download the complete replication package into dest and manifest it."""
    transport = transport or HttpTransport()
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    if ref.kind == "dataverse":
        entries, note = _fetch_dataverse(ref, dest, transport)
    elif ref.kind == "github":
        entries, note = _fetch_github(ref, dest, transport)
    elif ref.kind == "osf":
        entries, note = _fetch_osf(ref, dest, transport)
    else:
        entries, note = _fetch_http(ref, dest, transport)
    entries = sorted(entries, key=lambda e: e["path"])
    manifest = PackageManifest(
        entries=entries,
        source={"kind": ref.kind, "identifier": ref.identifier},
        retrieved_at=datetime.now(timezone.utc).isoformat(),
        version_note=note)
    verify_manifest(manifest, dest)
    return manifest


def verify_manifest(manifest: PackageManifest, root) -> bool:
    """Recompute every entry hash; a corrupted byte flips the result."""
    root = Path(root)
    for entry in manifest.entries:
        p = root / entry["path"]
        if not p.exists():
            raise RetrievalFailed(f"manifest entry missing on disk: {entry['path']}")
        if _sha256(p.read_bytes()) != entry["sha256"]:
            raise RetrievalFailed(f"hash mismatch for {entry['path']}")
    return True


def manifest_from_directory(package_dir, dest, source_note="manual") -> PackageManifest:
    """Manual-supply fallback: copy a local package into raw/ and manifest it."""
    package_dir = Path(package_dir)
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    entries = []
    for p in sorted(package_dir.rglob("*")):
        if not p.is_file():
            continue
        rel = p.relative_to(package_dir).as_posix()
        target = _safe_join(dest, rel)
        target.parent.mkdir(parents=True, exist_ok=True)
        data = p.read_bytes()
        target.write_bytes(data)
        entries.append({"path": rel, "size": len(data), "sha256": _sha256(data)})
    return PackageManifest(
        entries=entries,
        source={"kind": "http", "identifier": f"file://{package_dir}"},
        retrieved_at=datetime.now(timezone.utc).isoformat(),
        version_note=source_note)


def write_study_info(info: StudyInfo, path):
    Path(path).write_text(
        json.dumps(info.to_json_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8")


def write_manifest(manifest: PackageManifest, path):
    Path(path).write_text(
        json.dumps(manifest.to_json_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8")
