"""INI configuration with SI suffixes; all model defaults live in defaults.ini."""

from __future__ import annotations

import configparser
import hashlib
import os
from importlib import resources
from typing import Optional

from .units import parse_si

ENV_VAR = "FERRO_CONFIG"


class Config:
    def __init__(self, parser: configparser.ConfigParser):
        self._p = parser

    def float(self, section: str, key: str) -> float:
        return parse_si(self._p.get(section, key))

    def int(self, section: str, key: str) -> int:
        return int(round(self.float(section, key)))

    def str(self, section: str, key: str) -> str:
        return self._p.get(section, key).strip()

    def floats(self, section: str, key: str) -> list:
        raw = self._p.get(section, key)
        return [parse_si(tok) for tok in raw.replace(",", " ").split()]

    def set(self, section: str, key: str, value) -> None:
        if not self._p.has_section(section):
            self._p.add_section(section)
        self._p.set(section, key, str(value))

    def text(self) -> str:
        lines = []
        for section in sorted(self._p.sections()):
            lines.append(f"[{section}]")
            for key, value in sorted(self._p.items(section)):
                lines.append(f"{key} = {value.strip()}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.text().encode()).hexdigest()

    def copy(self) -> "Config":
        p = configparser.ConfigParser()
        p.read_string(self.text())
        return Config(p)


def load_config(path: Optional[str] = None) -> Config:
    """Defaults, then $FERRO_CONFIG, then ``path``; later files override keys."""
    parser = configparser.ConfigParser()
    parser.read_string(resources.files("ferrosram").joinpath("defaults.ini").read_text())
    for extra in (os.environ.get(ENV_VAR), path):
        if extra:
            with open(extra) as fh:
                parser.read_file(fh)
    return Config(parser)
