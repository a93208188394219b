"""Loading, filtering and context resolution for threaded comment dumps.

Input files are newline-delimited JSON in the Pushshift layout (``subreddit``,
``parent_id`` with ``t1_``/``t3_`` prefixes, ``[removed]``/``[deleted]`` body
sentinels). Files written by :func:`save_store` use the normalized field names
of :class:`Comment` and load back through the same reader.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Iterator, Mapping

from .errors import FileUnreadable, SchemaError

logger = logging.getLogger(__name__)

DELETED = "[deleted]"
REMOVED = "[removed]"
NAME_MASK = "[NAME]"

# /u/name anywhere, or bare u/name not glued to a preceding word or path.
USERNAME_RE = re.compile(r"(?:/u/|(?<![\w/])u/)[\w-]+")

REQUIRED_FIELDS = ("id", "author", "body", "score", "created_utc")


@dataclass(frozen=True)
class Comment:
    id: str
    parent_id: str
    link_id: str
    community: str
    author: str
    body: str
    score: int
    created_utc: int
    removed_by_moderator: bool = False
    deleted_by_author: bool = False
    year_tag: str = ""

    @property
    def is_top_level(self) -> bool:
        return not self.parent_id


class CommentStore:
    """Immutable collection of comments indexed by id and by community.

    Iteration within a community is ordered by ``(created_utc, id)``.
    """

    def __init__(self, comments: Iterable[Comment], skipped: int = 0):
        by_id: dict[str, Comment] = {}
        for c in comments:
            if not c.id:
                raise ValueError("comment id must be nonempty")
            if not c.community:
                raise ValueError(f"comment {c.id} has an empty community")
            if c.id in by_id:
                raise ValueError(f"duplicate comment id {c.id!r}")
            by_id[c.id] = c
        ordered = sorted(by_id.values(), key=lambda c: (c.community, c.created_utc, c.id))
        by_comm: dict[str, list[str]] = {}
        for c in ordered:
            by_comm.setdefault(c.community, []).append(c.id)
        self._by_id = MappingProxyType(by_id)
        self._by_community = MappingProxyType({k: tuple(v) for k, v in by_comm.items()})
        self._ordered = tuple(ordered)
        self.skipped = skipped

    @property
    def index_by_id(self) -> Mapping[str, Comment]:
        return self._by_id

    @property
    def index_by_community(self) -> Mapping[str, tuple[str, ...]]:
        return self._by_community

    @property
    def communities(self) -> list[str]:
        return sorted(self._by_community)

    def community(self, name: str) -> list[Comment]:
        return [self._by_id[i] for i in self._by_community.get(name, ())]

    def get(self, comment_id: str) -> Comment | None:
        return self._by_id.get(comment_id)

    def __contains__(self, comment_id: object) -> bool:
        return comment_id in self._by_id

    def __iter__(self) -> Iterator[Comment]:
        return iter(self._ordered)

    def __len__(self) -> int:
        return len(self._ordered)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CommentStore):
            return NotImplemented
        return self._ordered == other._ordered


@dataclass
class ExclusionLists:
    """Accounts whose comments never enter a sample.

    ``moderator_accounts`` maps community → names; the key ``"*"`` applies to
    every community. Names are compared trimmed and case-folded.
    """

    bot_accounts: set[str] = field(default_factory=set)
    moderator_accounts: dict[str, set[str]] = field(default_factory=dict)

    def __post_init__(self):
        self.bot_accounts = {_norm_name(n) for n in self.bot_accounts if _norm_name(n)}
        self.moderator_accounts = {
            _norm_name(c) if c != "*" else "*": {_norm_name(n) for n in names if _norm_name(n)}
            for c, names in self.moderator_accounts.items()
        }

    def excludes(self, author: str, community: str) -> bool:
        name = _norm_name(author)
        if name in self.bot_accounts:
            return True
        if name in self.moderator_accounts.get("*", ()):
            return True
        return name in self.moderator_accounts.get(_norm_name(community), ())

    @classmethod
    def from_files(cls, bots: str | Path | None = None, mods: str | Path | None = None) -> "ExclusionLists":
        """Read exclusion lists.

        The bots file holds one account per line. Each line of the moderators
        file is either ``account`` (excluded everywhere) or
        ``community account``. Blank lines and ``#`` comments are ignored.
        """
        bot_names: set[str] = set()
        mod_names: dict[str, set[str]] = {}
        if bots:
            for line in _read_lines(bots):
                bot_names.add(line)
        if mods:
            for line in _read_lines(mods):
                parts = line.split()
                if len(parts) == 1:
                    mod_names.setdefault("*", set()).add(parts[0])
                elif len(parts) == 2:
                    mod_names.setdefault(parts[0], set()).add(parts[1])
                else:
                    raise SchemaError(f"{mods}: cannot parse moderator line {line!r}")
        return cls(bot_names, mod_names)


def _norm_name(name: str) -> str:
    return name.strip().lower()


def _read_lines(path: str | Path) -> list[str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise FileUnreadable(f"cannot read {path}: {exc}") from exc
    out = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            out.append(line)
    return out


def _strip_prefix(value: str, prefix: str) -> str:
    return value[len(prefix):] if value.startswith(prefix) else value


def parse_record(obj: Mapping, year_tag: str = "") -> Comment:
    """Turn one decoded JSON object into a :class:`Comment`.

    Raises KeyError/TypeError/ValueError on records that do not fit.
    """
    if not isinstance(obj, Mapping):
        raise TypeError("record is not an object")
    for key in REQUIRED_FIELDS:
        if obj.get(key) is None:
            raise KeyError(key)
    community = obj.get("community") or obj.get("subreddit")
    if not community:
        raise KeyError("subreddit")

    cid = _strip_prefix(str(obj["id"]), "t1_")
    link_id = str(obj.get("link_id") or "")
    parent = str(obj.get("parent_id") or "")
    if parent.startswith("t3_") or (parent and parent == link_id):
        parent = ""
    parent = _strip_prefix(parent, "t1_")

    author = str(obj["author"])
    body = str(obj["body"])
    score = obj["score"]
    if isinstance(score, bool) or not isinstance(score, (int, float)) or score != int(score):
        raise TypeError("score must be an integer")
    created = obj["created_utc"]
    created = int(created)

    removed = bool(obj.get("removed_by_moderator", False)) or body == REMOVED
    deleted = bool(obj.get("deleted_by_author", False)) or body == DELETED or author == DELETED
    return Comment(
        id=cid,
        parent_id=parent,
        link_id=link_id,
        community=str(community),
        author=author,
        body=body,
        score=int(score),
        created_utc=created,
        removed_by_moderator=removed,
        deleted_by_author=deleted,
        year_tag=str(obj.get("year_tag") or year_tag),
    )


def load_corpus(path: str | Path, year_tag: str = "") -> CommentStore:
    """Parse a newline-delimited dump into a :class:`CommentStore`.

    Unparseable records and repeated ids are skipped and counted in
    ``store.skipped``. If more than half the non-blank lines fail, the file is
    assumed to be the wrong kind of file and :class:`SchemaError` is raised.
    """
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise FileUnreadable(f"cannot read {path}: {exc}") from exc

    comments: list[Comment] = []
    seen: set[str] = set()
    total = failed = 0
    with fh:
        try:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                total += 1
                try:
                    c = parse_record(json.loads(line), year_tag)
                except (ValueError, KeyError, TypeError) as exc:
                    failed += 1
                    logger.debug("%s:%d skipped (%s)", path, lineno, exc)
                    continue
                if c.id in seen:
                    failed += 1
                    logger.debug("%s:%d duplicate id %s", path, lineno, c.id)
                    continue
                seen.add(c.id)
                comments.append(c)
        except UnicodeDecodeError as exc:
            raise FileUnreadable(f"{path} is not UTF-8: {exc}") from exc

    if total and failed * 2 > total:
        raise SchemaError(f"{path}: {failed} of {total} records failed to parse")
    if failed:
        logger.info("%s: skipped %d of %d records", path, failed, total)
    return CommentStore(comments, skipped=failed)


def save_store(store: CommentStore, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for c in store:
            fh.write(json.dumps(asdict(c), sort_keys=True, ensure_ascii=False) + "\n")


def is_eligible(comment: Comment, excl: ExclusionLists | None = None) -> bool:
    if comment.removed_by_moderator or comment.deleted_by_author:
        return False
    if comment.author == DELETED:
        return False
    return not (excl is not None and excl.excludes(comment.author, comment.community))


def filter_eligible(store: CommentStore, excl: ExclusionLists | None = None) -> CommentStore:
    return CommentStore((c for c in store if is_eligible(c, excl)), skipped=store.skipped)


def mask_usernames(body: str) -> str:
    return USERNAME_RE.sub(NAME_MASK, body)


def masked(comment: Comment) -> Comment:
    return replace(comment, body=mask_usernames(comment.body))


def resolve_context(store: CommentStore, target: Comment) -> Comment | None:
    if not target.parent_id:
        return None
    return store.get(target.parent_id)
