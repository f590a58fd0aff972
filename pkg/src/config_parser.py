"""
SafePD Configuration Parser Module

Copyright (C) 2024 SafePD Team

This program is free software: you can redistribute it and/or modify
it under the terms of the GNU General Public License as published by
the Free Software Foundation, either version 3 of the License, or
(at your option) any later version.

This program is distributed in the hope that it will be useful,
but WITHOUT ANY WARRANTY; without even the implied warranty of
MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
GNU General Public License for more details.

You should have received a copy of the GNU General Public License
along with this program.  If not, see <https://www.gnu.org/licenses/>.
"""

import logging
import os
import re
from typing import Any, Dict, List, Optional

from config_validator import ConfigError

logger = logging.getLogger("safepd.config")

_SECTION_HEADER = re.compile(r"^\[([A-Za-z_][A-Za-z0-9_.-]*)\]$")
_BLOCK_OPEN = re.compile(r"^([A-Za-z_][A-Za-z0-9_.-]*)\s*\{$")


def parse_scalar(text: str) -> Any:
    """Convert one value token: booleans, quoted strings, ints, floats, else the bare word."""
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    for convert in (int, float):
        try:
            return convert(text)
        except ValueError:
            pass
    return text


def parse_value(text: str) -> Any:
    if text.startswith("[") and text.endswith("]"):
        items = (item.strip() for item in text[1:-1].split(","))
        return [parse_scalar(item) for item in items if item]
    return parse_scalar(text)


def strip_comment(line: str) -> str:
    """Drop a whole-line comment or a trailing `` #`` comment that sits outside quotes."""
    line = line.strip()
    if line.startswith("#"):
        return ""
    before, marker, _ = line.partition(" #")
    if marker and before.count('"') % 2 == 0:
        return before.rstrip()
    return line


class ConfigParser:
    """Parser for run configuration files.

    Three forms are understood: ``key = value`` lines, ``[section]`` headers
    that scope the keys after them, and ``name {`` ... ``}`` blocks that scope
    the keys inside them. Problems are collected rather than raised.
    """

    def __init__(self):
        self.line_number = 0
        self.errors: List[str] = []
        self.warnings: List[str] = []

    def parse(self, content: str) -> Dict[str, Any]:
        self.line_number = 0
        self.errors = []
        self.warnings = []
        if not content.strip():
            return {}
        try:
            return self._parse_lines(content.splitlines())
        except Exception as e:
            self.errors.append(f"Parse error: {e}")
            return {}

    def _parse_lines(self, lines: List[str]) -> Dict[str, Any]:
        config: Dict[str, Any] = {}
        section = config
        block: Optional[Dict[str, Any]] = None
        block_line = 0

        for self.line_number, raw in enumerate(lines, start=1):
            line = strip_comment(raw)
            if not line:
                continue
            target = section if block is None else block

            if line.startswith("}"):
                if block is None:
                    self._warn("Unmatched closing brace")
                block = None
            elif block is None and _SECTION_HEADER.match(line):
                name = _SECTION_HEADER.match(line).group(1)
                section = config.setdefault(name, {})
                if not isinstance(section, dict):
                    self.errors.append(f"Line {self.line_number}: section '{name}' clashes with a key")
                    section = {}
            elif block is None and _BLOCK_OPEN.match(line):
                block = config.setdefault(_BLOCK_OPEN.match(line).group(1), {})
                block_line = self.line_number
            elif "=" in line:
                self._assign(target, line)
            else:
                self._warn(f"Unrecognized syntax: {line}")

        if block is not None:
            self.errors.append(f"Line {block_line}: Section not closed")
        return config

    def _assign(self, target: Dict[str, Any], line: str):
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            self.errors.append(f"Line {self.line_number}: Missing key in '{line}'")
            return
        target[key] = parse_value(value.strip())

    def _warn(self, message: str):
        self.warnings.append(f"Line {self.line_number}: {message}")

    def get_errors(self) -> List[str]:
        return self.errors.copy()

    def get_warnings(self) -> List[str]:
        return self.warnings.copy()


def parse_config_file(file_path: str) -> Dict[str, Any]:
    """Parse a configuration file; raise ConfigError on syntax errors."""
    if not os.path.exists(file_path):
        raise FileNotFoundError(file_path)

    with open(file_path, "r", encoding="utf-8") as f:
        parser = ConfigParser()
        config = parser.parse(f.read())

    for warning in parser.get_warnings():
        logger.warning(f"Config warning: {warning}")
    errors = parser.get_errors()
    if errors:
        raise ConfigError(f"{file_path}: " + "; ".join(errors))
    return config
