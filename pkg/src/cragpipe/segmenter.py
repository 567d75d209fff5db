"""Split raw HTML into bounded-length text segments using the document tree.

The tree is walked breadth-first. A node whose whole text (its own plus all
descendants) is shorter than ``max_chars`` becomes one segment and its subtree
is not visited further. Larger nodes are expanded; text leaves that are still
too long are packed on whitespace into pieces under the threshold.
"""

from __future__ import annotations

import enum
import re
from collections import deque
from dataclasses import dataclass, field
from html.parser import HTMLParser
from typing import Optional

from .corpus import SearchResult

DEFAULT_MAX_CHARS = 2000

TEXT_TAG = "#text"

# Content of these elements never reaches the visible text.
HIDDEN_TAGS = frozenset({"script", "style", "head", "noscript"})

VOID_TAGS = frozenset(
    {
        "area", "base", "br", "col", "embed", "hr", "img", "input", "link",
        "meta", "param", "source", "track", "wbr",
    }
)


class Origin(str, enum.Enum):
    WEB_PAGE = "WebPage"
    API_RESPONSE = "ApiResponse"
    SNIPPET = "Snippet"


@dataclass(eq=False)
class DomNode:
    tag: str
    direct_text: str = ""
    children: list["DomNode"] = field(default_factory=list)
    total_text_len: int = 0

    @property
    def is_text(self) -> bool:
        return self.tag == TEXT_TAG

    def text(self) -> str:
        """Concatenated descendant text in document order."""
        parts: list[str] = []
        stack = [self]
        while stack:
            node = stack.pop()
            if node.is_text:
                parts.append(node.direct_text)
            else:
                stack.extend(reversed(node.children))
        return "".join(parts)


@dataclass(frozen=True)
class Segment:
    doc_index: int
    text: str
    origin: Origin = Origin.WEB_PAGE
    node_path: tuple[int, ...] = ()

    @property
    def char_len(self) -> int:
        return len(self.text)


class _TreeBuilder(HTMLParser):
    """Lenient tree construction on top of the stdlib tokenizer.

    Unknown end tags are ignored; an end tag closes the nearest open element
    with the same name, implicitly closing anything opened after it.
    """

    def __init__(self) -> None:
        super().__init__(convert_charrefs=True)
        self.root = DomNode("#root")
        self.stack = [self.root]
        self.hidden_depth = 0

    def handle_starttag(self, tag, attrs):
        if tag in VOID_TAGS:
            return
        if tag == "body":
            # an unclosed <head> must not swallow the page
            self.handle_endtag("head")
        node = DomNode(tag)
        if self.hidden_depth == 0:
            self.stack[-1].children.append(node)
        if tag in HIDDEN_TAGS:
            self.hidden_depth += 1
        self.stack.append(node)

    def handle_startendtag(self, tag, attrs):
        # <div/> style self-closing tags hold no content
        return

    def handle_endtag(self, tag):
        for i in range(len(self.stack) - 1, 0, -1):
            if self.stack[i].tag == tag:
                for node in self.stack[i:]:
                    if node.tag in HIDDEN_TAGS:
                        self.hidden_depth -= 1
                del self.stack[i:]
                return

    def handle_data(self, data):
        if self.hidden_depth or not data:
            return
        parent = self.stack[-1]
        if parent.children and parent.children[-1].is_text:
            parent.children[-1].direct_text += data
        else:
            parent.children.append(DomNode(TEXT_TAG, direct_text=data))

    # comments, doctypes and processing instructions are dropped
    def handle_comment(self, data):
        return

    def handle_decl(self, decl):
        return

    def handle_pi(self, data):
        return

    def unknown_decl(self, data):
        return


def _fill_lengths(root: DomNode) -> None:
    order = []
    stack = [root]
    while stack:
        node = stack.pop()
        order.append(node)
        stack.extend(node.children)
    for node in reversed(order):
        if node.is_text:
            node.total_text_len = len(node.direct_text)
        else:
            node.total_text_len = sum(c.total_text_len for c in node.children)


def parse_html(raw: bytes | str) -> DomNode:
    """Parse arbitrary bytes into a DomNode tree rooted at ``#root``. Never raises."""
    if isinstance(raw, bytes):
        raw = raw.decode("utf-8", errors="replace")
    builder = _TreeBuilder()
    try:
        builder.feed(raw)
        builder.close()
    except Exception:  # pragma: no cover - HTMLParser is very forgiving
        builder = _TreeBuilder()
        builder.root.children.append(DomNode(TEXT_TAG, direct_text=_strip_tags(raw)))
    _fill_lengths(builder.root)
    return builder.root


def _strip_tags(raw: str) -> str:
    return re.sub(r"<[^>]*>", " ", raw)


def _normalize(text: str) -> str:
    return " ".join(text.split())


def split_oversize_text(text: str, max_chars: int = DEFAULT_MAX_CHARS) -> list[str]:
    """Greedily pack whitespace-delimited tokens into pieces shorter than ``max_chars``.

    Tokens with no internal whitespace that are themselves too long are cut
    into pieces of ``max_chars - 1`` characters.
    """
    if max_chars < 2:
        raise ValueError("max_chars must be at least 2")
    out: list[str] = []
    current = ""
    for token in text.split():
        if len(token) >= max_chars:
            if current:
                out.append(current)
                current = ""
            step = max_chars - 1
            out.extend(token[i : i + step] for i in range(0, len(token), step))
        elif not current:
            current = token
        elif len(current) + 1 + len(token) < max_chars:
            current = f"{current} {token}"
        else:
            out.append(current)
            current = token
    if current:
        out.append(current)
    return out


def segment_tree(
    root: DomNode,
    max_chars: int = DEFAULT_MAX_CHARS,
    doc_index: int = 0,
    origin: Origin = Origin.WEB_PAGE,
) -> list[Segment]:
    """Breadth-first threshold segmentation of a parsed document.

    Emitted text is whitespace-normalized. Whitespace-only nodes are pruned.
    Fragments of a split leaf carry the leaf path plus the fragment ordinal.
    """
    if max_chars < 2:
        raise ValueError("max_chars must be at least 2")
    out: list[Segment] = []
    queue: deque[tuple[DomNode, tuple[int, ...]]] = deque([(root, ())])
    while queue:
        node, path = queue.popleft()
        if node.total_text_len == 0:
            continue
        if node.total_text_len < max_chars or node.is_text:
            text = _normalize(node.text())
            if not text:
                continue
            if len(text) < max_chars:
                out.append(Segment(doc_index, text, origin, path))
            else:
                for i, piece in enumerate(split_oversize_text(text, max_chars)):
                    out.append(Segment(doc_index, piece, origin, path + (i,)))
            continue
        for i, child in enumerate(node.children):
            queue.append((child, path + (i,)))
    return out


def segment_html(
    raw: bytes | str, doc_index: int = 0, max_chars: int = DEFAULT_MAX_CHARS
) -> list[Segment]:
    return segment_tree(parse_html(raw), max_chars=max_chars, doc_index=doc_index)


def snippet_segment(
    result: SearchResult, doc_index: int, max_chars: int = DEFAULT_MAX_CHARS
) -> Optional[Segment]:
    pieces = split_oversize_text(result.page_snippet or "", max_chars)
    if not pieces:
        return None
    return Segment(doc_index, pieces[0], Origin.SNIPPET, ())
