"""Flat dotted-key configuration files.

One assignment per line, ``section.key = value``; ``#`` starts a comment.
No nesting, no type schema: values stay strings until a typed getter is
asked for them, so a config file diffs line-by-line and overrides compose
trivially.
"""

from __future__ import annotations

from dataclasses import dataclass, field


class ConfigError(ValueError):
    """Malformed config file or override, or a bad typed access."""


@dataclass
class Config:
    values: dict[str, str] = field(default_factory=dict)

    def get(self, key: str, default: str | None = None) -> str | None:
        return self.values.get(key, default)

    def get_int(self, key: str, default: int | None = None) -> int | None:
        return self._typed(key, default, int, "an integer")

    def get_float(self, key: str, default: float | None = None) -> float | None:
        return self._typed(key, default, float, "a number")

    def get_bool(self, key: str, default: bool | None = None) -> bool | None:
        def parse(raw: str) -> bool:
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)

        return self._typed(key, default, parse, "a boolean")

    def _typed(self, key, default, cast, label):
        raw = self.values.get(key)
        if raw is None:
            return default
        try:
            return cast(raw)
        except ValueError as exc:
            raise ConfigError(f"{key} = {raw!r} is not {label}") from exc

    def section(self, prefix: str) -> dict[str, str]:
        """All keys under ``prefix.``, with the prefix stripped."""
        head = prefix + "."
        return {
            key[len(head):]: value
            for key, value in self.values.items()
            if key.startswith(head)
        }

    def apply_overrides(self, overrides: list[str]) -> None:
        for item in overrides:
            key, value = _parse_assignment(item, where="--set")
            self.values[key] = value


def _parse_assignment(text: str, where: str) -> tuple[str, str]:
    if "=" not in text:
        raise ConfigError(f"{where}: expected key=value, got {text!r}")
    key, _, value = text.partition("=")
    key = key.strip()
    value = value.strip()
    if not key:
        raise ConfigError(f"{where}: empty key in {text!r}")
    return key, value


def parse_config(text: str) -> Config:
    values: dict[str, str] = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        key, value = _parse_assignment(line, where=f"line {lineno}")
        values[key] = value
    return Config(values)


def load_config(path) -> Config:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc


def dump_config(config: Config) -> str:
    return "".join(
        f"{key} = {config.values[key]}\n" for key in sorted(config.values)
    )
