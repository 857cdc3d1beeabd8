"""
fixtures
----------------------------------

Hand-built environments shared by the test modules.
"""
from dualnav.dualnav_webenv import Element, Environment, Page, Task


def ring_environment(size=4):
    """Every page links to the next two pages: a regular graph whose
    visiting distribution is uniform."""
    pages = {
        i: Page(
            i,
            (
                Element(0, "link", (i, 100 + i), target=(i + 1) % size),
                Element(1, "link", (i, 200 + i), target=(i + 2) % size),
            ),
            (10 + i, 20 + i, 30 + i, 40 + i),
        )
        for i in range(size)
    }
    return Environment(pages, 0, vocab=300)


def chain_environment(length=3):
    """Page i links to page i + 1; the last page links back to the start."""
    pages = {}
    for i in range(length):
        target = (i + 1) % length
        pages[i] = Page(
            i,
            (Element(0, "link", (50 + target, 60 + target), target=target),),
            (50 + i, 60 + i, 70 + i, 80 + i),
        )
    return Environment(pages, 0, vocab=100)


def shop_environment():
    """A start page holding one element of every kind and a second page."""
    pages = {
        0: Page(
            0,
            (
                Element(0, "link", (1, 2), target=1, depth=2),
                Element(1, "button", (3,)),
                Element(2, "textbox", (4,), accepts_text=True),
                Element(3, "button", (5,), target=1),
            ),
            (11, 12, 13, 14),
        ),
        1: Page(1, (Element(0, "link", (7,), target=0),), (21, 22, 23, 24)),
    }
    return Environment(pages, 0, vocab=30)


def page_task(page, intent=(1, 2, 9), steps=1, task_id="g"):
    return Task(task_id, "page", page, tuple(intent), steps)
