"""GRI and ESRS disclosure catalogs, content-index parsing, and overlap stats.

The content index of a report maps each disclosure requirement to the pages
addressing it; parsing it here is what turns report text into weak relevance
labels. The crosswalk side computes how much of the ESRS datapoint catalog
overlaps with GRI.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import Document, StandardFamily
from .errors import (
    CatalogValidationError,
    ContentIndexValidationError,
    PageRefParseError,
    UnknownDisclosureError,
)

# Notes that really reference a different filing ("p.464-468 of Business
# Report") must not become qrels for this document.
DEFAULT_EXTERNAL_REF_PATTERNS = (
    r"^p\.\s*\d",
    r"\bof(?:\s+\w+){0,3}\s+Report\b",
)

UNDISCLOSED_MARK = "-"


@dataclass(frozen=True)
class DisclosureRequirement:
    """One standard datapoint; its rendered id + title is the retrieval query."""

    disclosure_id: str
    title: str
    standard_family: StandardFamily
    topic: str = ""
    section: str = ""

    def __post_init__(self):
        if not self.disclosure_id.strip():
            raise CatalogValidationError("disclosure_id must be non-empty")
        if self.standard_family is StandardFamily.ESRS and not self.topic.strip():
            raise CatalogValidationError(
                f"{self.disclosure_id}: ESRS entries require a topic"
            )


@dataclass(frozen=True)
class ContentIndexEntry:
    doc_id: str
    disclosure_id: str
    pages: tuple[int, ...]
    note: str = ""
    external_ref: bool = False

    @property
    def undisclosed(self) -> bool:
        return not self.pages and not self.external_ref


@dataclass(frozen=True)
class CrosswalkEntry:
    esrs_topic: str
    esrs_section: str
    esrs_datapoint: str
    gri_datapoint: str | None = None


@dataclass(frozen=True)
class OverlapStats:
    unique_topics: int
    unique_sections: int
    total_datapoints: int
    avg_sections_per_topic: float
    avg_datapoints_per_section: float
    sections_with_overlap: int
    sections_without_overlap: int
    section_overlap_ratio: float
    datapoints_with_overlap: int
    datapoints_without_overlap: int
    datapoint_overlap_ratio: float


class Catalog:
    """Disclosure requirements keyed by (standard_family, disclosure_id)."""

    def __init__(self, requirements: Iterable[DisclosureRequirement] = ()):
        self._by_key: dict[tuple[StandardFamily, str], DisclosureRequirement] = {}
        self._by_id: dict[str, list[DisclosureRequirement]] = {}
        for req in requirements:
            self.add(req)

    def add(self, req: DisclosureRequirement) -> None:
        key = (req.standard_family, req.disclosure_id)
        if key in self._by_key:
            raise CatalogValidationError(
                f"duplicate catalog entry {req.standard_family.value} {req.disclosure_id}"
            )
        self._by_key[key] = req
        self._by_id.setdefault(req.disclosure_id, []).append(req)

    def get(
        self, disclosure_id: str, family: StandardFamily | None = None
    ) -> DisclosureRequirement:
        if family is not None:
            req = self._by_key.get((family, disclosure_id))
            if req is None:
                raise UnknownDisclosureError(
                    f"unknown disclosure {disclosure_id!r} for {family.value}"
                )
            return req
        candidates = self._by_id.get(disclosure_id, [])
        if not candidates:
            raise UnknownDisclosureError(f"unknown disclosure {disclosure_id!r}")
        if len(candidates) > 1:
            families = ", ".join(c.standard_family.value for c in candidates)
            raise UnknownDisclosureError(
                f"disclosure {disclosure_id!r} is ambiguous across families ({families})"
            )
        return candidates[0]

    def __contains__(self, disclosure_id: str) -> bool:
        return disclosure_id in self._by_id

    def __len__(self) -> int:
        return len(self._by_key)

    def __iter__(self):
        return iter(self._by_key.values())

    def for_family(self, family: StandardFamily) -> list[DisclosureRequirement]:
        return [r for (f, _), r in self._by_key.items() if f is family]


def gri_topic(disclosure_id: str) -> str:
    """Numeric-series topic of a GRI id, used only for reporting.

    2xx economic, 3xx environmental, 4xx social; universal ids like "2-1"
    map to "universal".
    """
    m = re.match(r"(?:GRI\s+)?(\d+)-", disclosure_id)
    if not m:
        return ""
    series = int(m.group(1))
    if series < 100:
        return "universal"
    return {2: "economic", 3: "environmental", 4: "social"}.get(series // 100, "")


def render_query(req: DisclosureRequirement) -> str:
    """Compose the retrieval query from the disclosure id and its title."""
    if not req.title.strip():
        raise CatalogValidationError(
            f"{req.disclosure_id}: cannot render a query from an empty title"
        )
    return f"{req.disclosure_id}: {req.title}"


_RANGE_SEPS = re.compile(r"[–—]")  # en/em dashes seen in exports


def resolve_page_refs(raw: str) -> list[int]:
    """Expand a page-reference string like "50-53, 67-69" to sorted pages.

    "-" (or an empty string) marks an undisclosed entry and yields [].
    Inclusive ranges expand; duplicates collapse; order of tokens is
    irrelevant to the result.
    """
    cleaned = raw.strip()
    if cleaned in ("", UNDISCLOSED_MARK):
        return []
    cleaned = _RANGE_SEPS.sub("-", cleaned)
    pages: set[int] = set()
    for token in cleaned.split(","):
        token = token.strip()
        if not token:
            continue
        m = re.fullmatch(r"(\d+)\s*-\s*(\d+)", token)
        if m:
            lo, hi = int(m.group(1)), int(m.group(2))
            if lo > hi:
                raise PageRefParseError(token, raw)
            pages.update(range(lo, hi + 1))
            continue
        if re.fullmatch(r"\d+", token):
            page = int(token)
            if page < 1:
                raise PageRefParseError(token, raw)
            pages.add(page)
            continue
        raise PageRefParseError(token, raw)
    if any(p < 1 for p in pages):
        raise PageRefParseError(raw, raw)
    return sorted(pages)


def pages_to_raw(pages: Sequence[int]) -> str:
    """Compress a sorted page list back to "a-b, c" form (resolve inverse)."""
    if not pages:
        return UNDISCLOSED_MARK
    ordered = sorted(set(pages))
    runs: list[str] = []
    start = prev = ordered[0]
    for page in ordered[1:]:
        if page == prev + 1:
            prev = page
            continue
        runs.append(str(start) if start == prev else f"{start}-{prev}")
        start = prev = page
    runs.append(str(start) if start == prev else f"{start}-{prev}")
    return ", ".join(runs)


class ExternalRefDetector:
    def __init__(self, patterns: Sequence[str] = DEFAULT_EXTERNAL_REF_PATTERNS):
        self._compiled = [re.compile(p) for p in patterns]

    def __call__(self, note: str) -> bool:
        note = note.strip()
        return bool(note) and any(p.search(note) for p in self._compiled)


@dataclass
class IndexParse:
    """Validated entries plus the lenient-mode warning trail."""

    entries: list[ContentIndexEntry]
    warnings: list[str]


def parse_content_index(
    records: Iterable[dict],
    catalog: Catalog,
    doc: Document,
    strict: bool = True,
    external_ref_patterns: Sequence[str] = DEFAULT_EXTERNAL_REF_PATTERNS,
) -> IndexParse:
    """Resolve one document's content-index rows into validated entries.

    Rows whose note matches an external-reference pattern keep no pages (the
    cited text lives in another filing). Pages beyond the document's page
    count fail strict mode; in lenient mode they are dropped with a warning.
    """
    detector = ExternalRefDetector(external_ref_patterns)
    entries: list[ContentIndexEntry] = []
    warnings: list[str] = []
    offenders: list[str] = []
    for record in records:
        disclosure_id = record["disclosure_id"]
        family = record.get("standard_family")
        family = StandardFamily(family) if family else doc.meta.standard_family
        catalog.get(disclosure_id, family)  # raises UnknownDisclosureError
        note = (record.get("note") or "").strip()
        if detector(note):
            entries.append(
                ContentIndexEntry(
                    doc_id=doc.doc_id,
                    disclosure_id=disclosure_id,
                    pages=(),
                    note=note,
                    external_ref=True,
                )
            )
            continue
        pages = resolve_page_refs(record.get("pages_raw") or "")
        out_of_range = [p for p in pages if p > doc.meta.page_count]
        if out_of_range:
            message = (
                f"{doc.doc_id} {disclosure_id}: pages {out_of_range} exceed "
                f"page_count {doc.meta.page_count}"
            )
            if strict:
                offenders.append(message)
                continue
            warnings.append(message)
            pages = [p for p in pages if p <= doc.meta.page_count]
        entries.append(
            ContentIndexEntry(
                doc_id=doc.doc_id,
                disclosure_id=disclosure_id,
                pages=tuple(pages),
                note=note,
                external_ref=False,
            )
        )
    if offenders:
        raise ContentIndexValidationError(
            f"{len(offenders)} content-index entries reference pages out of range",
            offenders=offenders,
        )
    return IndexParse(entries=entries, warnings=warnings)


def read_content_index_rows(path: Path | str) -> list[dict]:
    """Load the delimited content-index file
    (doc_id, standard_family, disclosure_id, title, pages_raw, note)."""
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def write_content_index_rows(rows: Iterable[dict], path: Path | str) -> None:
    fieldnames = ["doc_id", "standard_family", "disclosure_id", "title", "pages_raw", "note"]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in fieldnames})


def derive_topic(disclosure_id: str, family: StandardFamily) -> str:
    """Best-effort topic when a file omits it: "ESRS E1-6" -> "E1",
    GRI ids -> numeric-series grouping."""
    if family is StandardFamily.ESRS:
        parts = disclosure_id.split()
        if len(parts) > 1:
            return parts[1].split("-")[0]
        return disclosure_id.split("-")[0]
    return gri_topic(disclosure_id)


def _requirement_from_row(row: dict) -> DisclosureRequirement:
    family = StandardFamily(row["standard_family"])
    disclosure_id = row["disclosure_id"]
    topic = (row.get("topic") or "").strip() or derive_topic(disclosure_id, family)
    return DisclosureRequirement(
        disclosure_id=disclosure_id,
        title=row["title"],
        standard_family=family,
        topic=topic,
        section=(row.get("section") or "").strip(),
    )


def catalog_from_index_rows(rows: Iterable[dict]) -> Catalog:
    """Derive a catalog from the id/title columns of content-index rows."""
    catalog = Catalog()
    seen: set[tuple[str, str]] = set()
    for row in rows:
        key = (row["standard_family"], row["disclosure_id"])
        if key in seen:
            continue
        seen.add(key)
        catalog.add(_requirement_from_row(row))
    return catalog


def read_catalog(path: Path | str) -> Catalog:
    """Load a catalog CSV (standard_family, disclosure_id, title, topic, section)."""
    catalog = Catalog()
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            catalog.add(_requirement_from_row(row))
    return catalog


def read_crosswalk(path: Path | str) -> list[CrosswalkEntry]:
    """Load the interoperability export
    (esrs_topic, esrs_section, esrs_datapoint, gri_datapoint)."""
    entries: list[CrosswalkEntry] = []
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            gri = (row.get("gri_datapoint") or "").strip()
            entries.append(
                CrosswalkEntry(
                    esrs_topic=row["esrs_topic"].strip(),
                    esrs_section=row["esrs_section"].strip(),
                    esrs_datapoint=row["esrs_datapoint"].strip(),
                    gri_datapoint=gri or None,
                )
            )
    return entries


def overlap_stats(crosswalk: Sequence[CrosswalkEntry]) -> OverlapStats:
    """Count ESRS topics/sections/datapoints and their GRI overlap.

    A datapoint may appear on several rows (one per GRI mapping); it counts
    once, and overlaps if any of its rows carries a GRI datapoint. A section
    overlaps if at least one of its datapoints does. Ratios stay exact here;
    rounding happens at presentation.
    """
    if not crosswalk:
        raise ValueError("crosswalk must be non-empty")
    topics: set[str] = set()
    sections: set[tuple[str, str]] = set()
    datapoints: dict[tuple[str, str, str], bool] = {}
    for entry in crosswalk:
        topics.add(entry.esrs_topic)
        section_key = (entry.esrs_topic, entry.esrs_section)
        sections.add(section_key)
        dp_key = (entry.esrs_topic, entry.esrs_section, entry.esrs_datapoint)
        datapoints[dp_key] = datapoints.get(dp_key, False) or entry.gri_datapoint is not None
    overlapping_sections = {(t, s) for (t, s, _), has in datapoints.items() if has}
    dp_with = sum(1 for has in datapoints.values() if has)
    total_dp = len(datapoints)
    n_sections = len(sections)
    return OverlapStats(
        unique_topics=len(topics),
        unique_sections=n_sections,
        total_datapoints=total_dp,
        avg_sections_per_topic=n_sections / len(topics),
        avg_datapoints_per_section=total_dp / n_sections,
        sections_with_overlap=len(overlapping_sections),
        sections_without_overlap=n_sections - len(overlapping_sections),
        section_overlap_ratio=len(overlapping_sections) / n_sections,
        datapoints_with_overlap=dp_with,
        datapoints_without_overlap=total_dp - dp_with,
        datapoint_overlap_ratio=dp_with / total_dp,
    )


def round_half_up(value: float, digits: int = 0) -> float:
    """Display rounding: exact half-up on decimal digits."""
    frac = Fraction(value).limit_denominator(10**12)
    scale = Fraction(10) ** digits
    scaled = frac * scale
    floored = scaled.numerator // scaled.denominator
    remainder = scaled - floored
    rounded = floored + (1 if remainder >= Fraction(1, 2) else 0)
    return float(Fraction(rounded, 1) / scale)


def format_overlap_table(stats: OverlapStats) -> str:
    rows = [
        ("Unique Topics", str(stats.unique_topics)),
        ("Unique Sections", str(stats.unique_sections)),
        ("Total Datapoints", str(stats.total_datapoints)),
        ("Avg. Sections/Topic", f"{round_half_up(stats.avg_sections_per_topic):.0f}"),
        ("Avg. Datapoints/Section", f"{round_half_up(stats.avg_datapoints_per_section):.0f}"),
        ("Sections with GRI Overlap", str(stats.sections_with_overlap)),
        ("Sections without GRI Overlap", str(stats.sections_without_overlap)),
        ("Sections GRI Overlap ratio", f"{round_half_up(stats.section_overlap_ratio, 2):.2f}"),
        ("Datapoints with GRI Overlap", str(stats.datapoints_with_overlap)),
        ("Datapoints without GRI Overlap", str(stats.datapoints_without_overlap)),
        ("Datapoints GRI Overlap ratio", f"{round_half_up(stats.datapoint_overlap_ratio, 2):.2f}"),
    ]
    width = max(len(name) for name, _ in rows)
    return "\n".join(f"{name:<{width}}  {value}" for name, value in rows)
