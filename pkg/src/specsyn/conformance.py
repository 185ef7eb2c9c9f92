"""Checking configuration files against synthesized specifications.

A config file is parsed into an ordered key -> value map, then every
specification is evaluated against it. Quantitative rules coerce the
observed string with the same number and boolean conventions the tagger
uses on text, so specs mined from prose apply to files directly.
Magnitudes are compared as written; units are never converted.

Connectives compose left to right: an AND node is violated when either
side is, an OR node only when both sides are. Advisory rules (use,
recommend, prefer) report findings but never make a spec "violated".
"""

from __future__ import annotations

import enum
import ipaddress
import re
from dataclasses import dataclass, field
from urllib.parse import urlparse

from .dsl import (
    Boolean,
    Connective,
    FormatClass,
    KeywordRef,
    Number,
    Relation,
    Rule,
    Specification,
    Text,
)
from .tagger import Lexicons, bool_polarity, load_lexicons


class ConfigError(Exception):
    """Unreadable configuration input."""


class DecodeError(ConfigError):
    """Configuration bytes are not valid UTF-8."""


_KEY_RE = re.compile(r"-{0,2}[A-Za-z_][A-Za-z0-9_.\-]*")
_MAGNITUDE_RE = re.compile(r"-?(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?")
_UNIT_TAIL_RE = re.compile(r"\s*(?:[A-Za-z_][A-Za-z0-9_]*|%)?\s*$")


class ConfigFormat(enum.Enum):
    KEY_VALUE = "kv"
    INI = "ini"


@dataclass(frozen=True)
class MalformedLine:
    line: int
    text: str
    reason: str


@dataclass
class ConfigEntry:
    key: str
    value: str
    line: int
    earlier_lines: tuple[int, ...] = ()


@dataclass
class ConfigMap:
    """Parsed configuration: unique keys, later duplicates override."""

    entries: dict[str, ConfigEntry] = field(default_factory=dict)
    malformed: list[MalformedLine] = field(default_factory=list)

    def put(self, key: str, value: str, line: int) -> None:
        existing = self.entries.get(key)
        if existing is None:
            self.entries[key] = ConfigEntry(key, value, line)
        else:
            self.entries[key] = ConfigEntry(
                key, value, line, existing.earlier_lines + (existing.line,)
            )

    def lookup(self, keyword: str) -> ConfigEntry | None:
        """Find a rule keyword: exact match first, then a `.keyword`
        suffix (so `max_rows` finds `mysqld.max_rows`); case-insensitive,
        and a leading option prefix `--` on the keyword is ignored."""
        wanted = keyword.lower().lstrip("-")
        for entry in self.entries.values():
            if entry.key.lower().lstrip("-") == wanted:
                return entry
        suffix = "." + wanted
        for entry in self.entries.values():
            if entry.key.lower().endswith(suffix):
                return entry
        return None


def _lines_of(source) -> list[str]:
    if hasattr(source, "read"):
        source = source.read()
    if isinstance(source, bytes):
        try:
            source = source.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError(f"config is not valid UTF-8: {exc}") from exc
    return source.splitlines()


def parse_config(source, format: ConfigFormat = ConfigFormat.KEY_VALUE) -> ConfigMap:
    """Parse `key = value` / `key value` lines; INI adds `[section]`
    headers whose keys flatten to `section.key`. `#` and `;` start
    comments; malformed lines are collected, not fatal."""
    config = ConfigMap()
    section = None
    for number, raw in enumerate(_lines_of(source), start=1):
        line = raw.strip()
        if not line or line.startswith("#") or line.startswith(";"):
            continue
        if format is ConfigFormat.INI and line.startswith("["):
            name = line[1:-1].strip() if line.endswith("]") else ""
            if name:
                section = name
            else:
                config.malformed.append(
                    MalformedLine(number, raw, "bad section header")
                )
            continue
        if "=" in line:
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
        else:
            parts = line.split(None, 1)
            key = parts[0]
            value = parts[1].strip() if len(parts) > 1 else ""
        if not _KEY_RE.fullmatch(key):
            config.malformed.append(MalformedLine(number, raw, "bad key"))
            continue
        full = f"{section}.{key}" if section else key
        config.put(full, value, number)
    return config


# ---------------------------------------------------------------------------
# value coercion

def coerce_number(raw: str) -> float | None:
    """Leading magnitude of the observed string, or None.

    Thousands separators are stripped and a trailing unit token is
    tolerated but otherwise ignored ("512 MB" -> 512.0).
    """
    m = _MAGNITUDE_RE.match(raw.strip())
    if m is None or not _UNIT_TAIL_RE.fullmatch(raw.strip(), m.end()):
        return None
    return float(m.group().replace(",", ""))


def coerce_bool(raw: str, lexicons: Lexicons) -> bool | None:
    surface = raw.strip().lower()
    if surface not in lexicons.bool_surfaces:
        return None
    return bool_polarity(surface)


def _matches(observed: str, value, lexicons: Lexicons) -> bool | None:
    """Equality of an observed string against one rule value.

    None means the observed string cannot be read as the value's type.
    """
    if isinstance(value, Number):
        x = coerce_number(observed)
        return None if x is None else x == value.magnitude
    if isinstance(value, Boolean):
        b = coerce_bool(observed, lexicons)
        return None if b is None else b == value.flag
    if isinstance(value, KeywordRef):
        return observed.strip().lower() == value.name.lower()
    if isinstance(value, Text):
        return observed.strip() == value.content
    raise TypeError(f"unsupported rule value {value!r}")


# ---------------------------------------------------------------------------
# format checkers

def _check_absolute_path(value: str) -> bool:
    return value.startswith("/")


def _check_relative_path(value: str) -> bool:
    return bool(value) and not value.startswith("/") and not re.search(r"\s", value)


def _check_email(value: str) -> bool:
    head, sep, tail = value.partition("@")
    return bool(sep) and bool(head) and bool(tail) and "@" not in tail


_DOMAIN_RE = re.compile(
    r"(?!-)[A-Za-z0-9-]{1,63}(?<!-)(?:\.(?!-)[A-Za-z0-9-]{1,63}(?<!-))*"
)


def _check_domain(value: str) -> bool:
    return bool(_DOMAIN_RE.fullmatch(value))


def _check_url(value: str) -> bool:
    parsed = urlparse(value)
    return bool(parsed.scheme) and bool(parsed.netloc)


def _check_ip(value: str) -> bool:
    try:
        ipaddress.ip_address(value)
    except ValueError:
        return False
    return True


_FORMAT_CHECKERS = {
    "absolute path": _check_absolute_path,
    "relative path": _check_relative_path,
    "email address": _check_email,
    "domain name": _check_domain,
    "url": _check_url,
    "ip address": _check_ip,
}


# ---------------------------------------------------------------------------
# rule evaluation

class Verdict(enum.Enum):
    VALUE_OUT_OF_RANGE = "ValueOutOfRange"
    WRONG_TYPE = "WrongType"
    MISSING_KEY = "MissingKey"
    FORMAT_MISMATCH = "FormatMismatch"
    ADVISORY_ONLY = "AdvisoryOnly"


@dataclass(frozen=True)
class Violation:
    rule: Rule
    key: str
    observed: str | None
    line: int | None
    verdict: Verdict

    @property
    def hard(self) -> bool:
        return self.verdict is not Verdict.ADVISORY_ONLY

    def to_dict(self) -> dict:
        from .dsl import print_spec, single

        return {
            "rule": print_spec(single(self.rule)),
            "key": self.key,
            "observed": self.observed,
            "line": self.line,
            "verdict": self.verdict.value,
        }


def _quantitative(rule: Rule, entry, lexicons) -> Violation | None:
    observed = entry.value
    rel = rule.relation

    def bad(verdict):
        return Violation(rule, entry.key, observed, entry.line, verdict)

    if rel in (Relation.GT, Relation.LT, Relation.INTERVAL):
        x = coerce_number(observed)
        if x is None:
            return bad(Verdict.WRONG_TYPE)
        if rel is Relation.GT:
            ok = x > rule.values[0].magnitude
        elif rel is Relation.LT:
            ok = x < rule.values[0].magnitude
        else:
            lo, hi = rule.values
            ok = lo.magnitude <= x <= hi.magnitude
        return None if ok else bad(Verdict.VALUE_OUT_OF_RANGE)

    results = [_matches(observed, value, lexicons) for value in rule.values]
    if rel is Relation.EQ:
        ok = results[0]
    elif rel is Relation.NEQ:
        ok = None if results[0] is None else not results[0]
    else:  # SET_MEMBERSHIP: any alternative satisfied
        if any(r is True for r in results):
            ok = True
        elif all(r is None for r in results):
            ok = None
        else:
            ok = False
    if ok is None:
        return bad(Verdict.WRONG_TYPE)
    return None if ok else bad(Verdict.VALUE_OUT_OF_RANGE)


def evaluate_rule(rule: Rule, config: ConfigMap, lexicons: Lexicons) -> Violation | None:
    """At most one finding per rule; None when the rule is satisfied."""
    entry = config.lookup(rule.keyword)
    rel = rule.relation

    if rel in (Relation.USE, Relation.RECOMMEND):
        if entry is None:
            return Violation(rule, rule.keyword, None, None, Verdict.ADVISORY_ONLY)
        return None
    if rel is Relation.WITH:
        partner = rule.values[0].name
        if entry is not None and config.lookup(partner) is None:
            return Violation(rule, partner, None, None, Verdict.MISSING_KEY)
        return None
    if rel is Relation.PREFER:
        # the disfavored alternative is set while the preferred key is not
        other = config.lookup(rule.values[0].name)
        if other is not None and entry is None:
            return Violation(
                rule, rule.keyword, other.value, other.line, Verdict.ADVISORY_ONLY
            )
        return None
    if rel is Relation.STRING_FORMAT:
        if entry is None:
            return None
        checker = _FORMAT_CHECKERS.get(rule.values[0].name.strip().lower())
        if checker is None or checker(entry.value):
            return None
        return Violation(
            rule, entry.key, entry.value, entry.line, Verdict.FORMAT_MISMATCH
        )

    if entry is None:
        return Violation(rule, rule.keyword, None, None, Verdict.MISSING_KEY)
    return _quantitative(rule, entry, lexicons)


def check_spec(
    spec: Specification, config: ConfigMap, lexicons: Lexicons | None = None
) -> tuple[bool, list[Violation]]:
    """Evaluate one specification: (violated, findings).

    Hard findings fold through the connectives (AND keeps either side's,
    OR keeps them only when both sides are violated); advisory findings
    are always reported and never affect the violated flag.
    """
    if lexicons is None:
        lexicons = load_lexicons()
    advisories: list[Violation] = []

    def leaf(rule: Rule) -> tuple[bool, list[Violation]]:
        finding = evaluate_rule(rule, config, lexicons)
        if finding is None:
            return False, []
        if not finding.hard:
            advisories.append(finding)
            return False, []
        return True, [finding]

    status, findings = leaf(spec.rules[0])
    for connective, rule in zip(spec.connectives, spec.rules[1:]):
        s2, f2 = leaf(rule)
        if connective is Connective.AND:
            status = status or s2
            findings = findings + f2
        else:
            both = status and s2
            findings = findings + f2 if both else []
            status = both
    return status, findings + advisories


def check(
    config: ConfigMap, specs, lexicons: Lexicons | None = None
) -> list[Violation]:
    """All findings for a list of specifications, in spec order."""
    if lexicons is None:
        lexicons = load_lexicons()
    out: list[Violation] = []
    for spec in specs:
        _, findings = check_spec(spec, config, lexicons)
        out.extend(findings)
    return out


def has_hard_violations(violations) -> bool:
    return any(v.hard for v in violations)


def render_violations(violations) -> str:
    """Human-readable table, one finding per line."""
    if not violations:
        return "no violations"
    lines = [f"  {'verdict':<16}{'key':<24}{'observed':<16}line"]
    for v in violations:
        observed = v.observed if v.observed is not None else "-"
        line = str(v.line) if v.line is not None else "-"
        lines.append(f"  {v.verdict.value:<16}{v.key:<24}{observed:<16}{line}")
    return "\n".join(lines)
