#!/usr/bin/env python

import os

from setuptools import setup

import dualnav

with open("README.rst") as readme_file:
    readme = readme_file.read()

with open("HISTORY.rst") as history_file:
    history = history_file.read().replace(".. :changelog:", "")

dirname = os.path.dirname(__file__)

test_requirements = [
    "coverage",
    "flake8",
    "pep8-naming",
    "mock",
]

setup(
    name="dualnav",
    use_scm_version=True,
    description=dualnav.__doc__,
    long_description=readme + "\n\n" + history,
    author=dualnav.__author__,
    author_email=dualnav.__email__,
    packages=["dualnav"],
    include_package_data=True,
    setup_requires=["setuptools_scm"],
    install_requires=[
        "numpy",
        "networkx",
        "lxml",
        "cssselect",
        'importlib_metadata; python_version<"3.8"',
    ],
    python_requires=">=3.7",
    license=dualnav.__license__,
    zip_safe=False,
    keywords="dualnav web-navigation planning",
    entry_points={"console_scripts": ["dualnav=dualnav.dualnav_cli:main"]},
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: GNU Affero General Public License v3",
        "Natural Language :: English",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.7",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
    ],
    test_suite="tests",
    tests_require=test_requirements,
)
