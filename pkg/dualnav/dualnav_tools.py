# -*- coding: utf-8 -*-
# Copyright 2026 DualNav contributors
# License AGPL-3.0 or later (https://www.gnu.org/licenses/agpl.html).

# A collection of functions split off from the domain modules
# with no or only minimal dependencies
import hashlib
import json
import logging

import numpy as np
from lxml.etree import SubElement, tostring
from lxml.html import Element, fromstring

logger = logging.getLogger("DualNav")

_ELEMENT_TAGS = {
    "link": "a",
    "button": "button",
    "textbox": "input",
    "scroll-region": "div",
}


def stable_hash(*parts):
    """64-bit hash of the given parts that is stable across processes
    (unlike the builtin ``hash``)."""
    payload = json.dumps(parts, sort_keys=True, separators=(",", ":"))
    digest = hashlib.blake2b(payload.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def save_tensors(path, header, **arrays):
    """Store named arrays and a JSON header in a single ``.npz`` file.

    :param str path:
        Target file. numpy appends ``.npz`` when missing, so pass it.

    :param dict header:
        Architecture description; must be JSON serializable.
    """
    payload = {key: np.asarray(value, dtype=np.float64) for key, value in arrays.items()}
    with open(path, "wb") as handle:
        np.savez(handle, __header__=np.array(json.dumps(header, sort_keys=True)), **payload)
    logger.debug("saved tensors %s to %s", sorted(payload), path)


def load_tensors(path):
    """Read a file written by :func:`save_tensors`.

    :return tuple:
        ``(header, arrays)`` where arrays is a dict of float64 arrays.
    """
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["__header__"]))
        arrays = {key: data[key].copy() for key in data.files if key != "__header__"}
    return header, arrays


def write_jsonl(path, rows):
    """Write an iterable of JSON-serializable dicts, one per line."""
    count = 0
    with open(path, "w") as handle:
        for row in rows:
            handle.write(json.dumps(row, sort_keys=True) + "\n")
            count += 1
    logger.debug("wrote %d lines to %s", count, path)
    return count


def read_jsonl(path):
    """Read a JSON lines file, skipping blank lines."""
    with open(path) as handle:
        return [json.loads(line) for line in handle if line.strip()]


def render_page(page, pretty_print=True):
    """Get an HTML fragment that represents a synthetic page.

    Every element is nested in as many wrapper ``div`` nodes as its depth
    requires, so that the element tree of the page is visible.

    :param page:
        A :class:`dualnav.dualnav_webenv.Page`.

    :return str:
        HTML string with one ``data-eid`` node per element.
    """
    root = Element("div")
    root.attrib["class"] = "page"
    root.attrib["data-page"] = str(page.id)
    content = SubElement(root, "p")
    content.attrib["class"] = "content"
    content.text = " ".join("t%d" % token for token in page.tokens)
    for element in page.elements:
        parent = root
        for _level in range(max(element.depth, 1) - 1):
            parent = SubElement(parent, "div")
        node = SubElement(parent, _ELEMENT_TAGS[element.kind])
        node.attrib["data-eid"] = str(element.id)
        node.attrib["data-kind"] = element.kind
        if element.kind == "scroll-region":
            node.attrib["class"] = "scroll-region"
        if element.target is not None:
            node.attrib["data-target"] = str(element.target)
        label = " ".join("t%d" % token for token in element.tokens)
        if element.kind == "textbox":
            node.attrib["placeholder"] = label
        else:
            node.text = label
    return tostring(root, pretty_print=pretty_print, encoding="unicode")


def element_depths(html_string, selector="[data-eid]"):
    """Read back the depth of every element of a rendered page.

    :param str html_string:
        Fragment produced by :func:`render_page`.

    :param str selector:
        CSS selector of the nodes to measure.

    :return dict:
        element id -> number of ancestors below and including the page node.
    """
    try:
        fragment = fromstring(html_string)
    except Exception:
        logger.error("Failure converting string to DOM:\n%s", html_string)
        raise
    # lxml keeps the parsed fragment under html/body, so count ancestors
    # only up to the page node
    depths = {}
    for node in fragment.cssselect(selector):
        depth = 0
        for ancestor in node.iterancestors():
            depth += 1
            if ancestor.attrib.get("class") == "page":
                break
        depths[int(node.attrib["data-eid"])] = depth
    return depths
