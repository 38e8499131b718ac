"""VP configuration and the ``key = value`` config file format.

A config file has sections ``[guest]``, ``[probe]``, ``[crash]``,
``[persistent]`` and ``[fuzz]``.  Addresses are hex with a ``0x`` prefix.
Unknown sections or keys are errors, reported with their line number.

    [guest]
    image = password.bin
    load_addr = 0x00001000
    entry_pc = 0x00001000
    stack_top = 0x00101000

    [probe]
    tracked = 0x40002000-0x40002003

    [crash]
    crash_mode = return_register
    main_return_pc = 0x00001004
"""

import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from vpfuzz.memory import DEFAULT_RAM_BASE, DEFAULT_RAM_SIZE, ConfigError
from vpfuzz.probe import AddressRange, ExhaustionPolicy, ProbeConfig, WritePolicy

DEFAULT_MAX_INSTRUCTIONS = 10_000_000
DEFAULT_TIMEOUT_MS = 2000


@dataclass(frozen=True)
class ReturnRegister:
    main_return_pc: int


@dataclass(frozen=True)
class ErrorHandler:
    handler_pc: int


@dataclass(frozen=True)
class Persistent:
    entry_pc: int
    exit_pc: int
    # Literal jump-back semantics: no memory/register restore between runs.
    jump_only: bool = False


@dataclass
class VpConfig:
    image_path: str = None
    load_addr: int = DEFAULT_RAM_BASE
    entry_pc: int = DEFAULT_RAM_BASE
    stack_top: int = DEFAULT_RAM_BASE + DEFAULT_RAM_SIZE
    tracked: list = field(default_factory=list)
    crash_mode: object = None
    persistent: Persistent = None
    max_instructions: int = DEFAULT_MAX_INSTRUCTIONS
    wall_clock_timeout_ms: int = DEFAULT_TIMEOUT_MS
    exhaustion: ExhaustionPolicy = ExhaustionPolicy.END_RUN
    write_policy: WritePolicy = WritePolicy.DISCARD
    ram_base: int = DEFAULT_RAM_BASE
    ram_size: int = DEFAULT_RAM_SIZE
    # In-memory image; takes precedence over image_path and is never serialised.
    image: bytes = field(default=None, repr=False, compare=False)

    def probe_config(self):
        return ProbeConfig(list(self.tracked), self.exhaustion, self.write_policy)

    def with_image(self, image):
        return replace(self, image=bytes(image))

    def load_image(self):
        if self.image is not None:
            return self.image
        if not self.image_path:
            raise ConfigError("no guest image configured")
        try:
            return Path(self.image_path).read_bytes()
        except OSError as exc:
            raise ConfigError(f"cannot read image {self.image_path}: {exc.strerror}") from None

    def breakpoints(self):
        bps = set()
        if isinstance(self.crash_mode, ReturnRegister):
            bps.add(self.crash_mode.main_return_pc)
        elif isinstance(self.crash_mode, ErrorHandler):
            bps.add(self.crash_mode.handler_pc)
        if self.persistent is not None:
            bps.add(self.persistent.exit_pc)
        return frozenset(bps)

    def validate(self, image_len=None):
        """Raise ConfigError on anything that would break a run."""
        if not isinstance(self.crash_mode, (ReturnRegister, ErrorHandler)):
            raise ConfigError("exactly one crash mode (return_register or error_handler) is required")
        ram_end = self.ram_base + self.ram_size
        if image_len is None:
            image_len = len(self.load_image())
        if not (self.ram_base <= self.load_addr and self.load_addr + image_len <= ram_end):
            raise ConfigError(
                f"image of {image_len} bytes at load_addr {self.load_addr:#x} does not fit "
                f"in RAM [{self.ram_base:#x}, {ram_end:#x})"
            )
        for name, pc in self._code_addresses():
            if pc & 3:
                raise ConfigError(f"{name} {pc:#x} is not 4-byte aligned")
            if not self.ram_base <= pc < ram_end:
                raise ConfigError(f"{name} {pc:#x} lies outside RAM")
        if not self.ram_base <= self.stack_top <= ram_end:
            raise ConfigError(f"stack_top {self.stack_top:#x} lies outside RAM")
        probe = self.probe_config()
        for r in probe.tracked:
            if r.start < ram_end and self.ram_base <= r.end:
                raise ConfigError(f"tracked range {r} overlaps RAM")
        if self.persistent is not None and self.persistent.entry_pc == self.persistent.exit_pc:
            raise ConfigError("persistent entry and exit addresses must differ")
        if self.max_instructions <= 0:
            raise ConfigError("max_instructions must be positive")
        if self.wall_clock_timeout_ms <= 0:
            raise ConfigError("timeout_ms must be positive")

    def _code_addresses(self):
        yield "entry_pc", self.entry_pc
        if isinstance(self.crash_mode, ReturnRegister):
            yield "main_return_pc", self.crash_mode.main_return_pc
        elif isinstance(self.crash_mode, ErrorHandler):
            yield "handler_pc", self.crash_mode.handler_pc
        if self.persistent is not None:
            yield "persistent_entry", self.persistent.entry_pc
            yield "persistent_exit", self.persistent.exit_pc


@dataclass
class FuzzSettings:
    seed_dir: str = None
    out_dir: str = None
    rng_seed: int = 0


@dataclass
class ConfigFile:
    vp: VpConfig
    fuzz: FuzzSettings = field(default_factory=FuzzSettings)


# section -> key -> kind
SCHEMA = {
    "guest": {
        "image": "path", "load_addr": "hex", "entry_pc": "hex", "stack_top": "hex",
        "max_instructions": "int", "timeout_ms": "int",
    },
    "probe": {"tracked": "ranges", "exhaustion": "word", "write_policy": "word"},
    "crash": {"crash_mode": "word", "main_return_pc": "hex", "handler_pc": "hex"},
    "persistent": {"persistent_entry": "hex", "persistent_exit": "hex", "jump_only": "bool"},
    "fuzz": {"seed_dir": "path", "out_dir": "path", "rng_seed": "int"},
}


def _parse_value(kind, raw, lineno):
    try:
        if kind == "hex":
            if not raw.lower().startswith("0x"):
                raise ValueError(f"address {raw!r} must be hex with a 0x prefix")
            return int(raw, 16)
        if kind == "int":
            return int(raw, 10)
        if kind == "bool":
            low = raw.lower()
            if low not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError(f"expected true/false, got {raw!r}")
            return low in ("true", "yes", "1")
        if kind == "ranges":
            return [AddressRange.parse(p) for p in raw.split(",") if p.strip()]
        return raw
    except (ValueError, ConfigError) as exc:
        raise ConfigError(f"line {lineno}: {exc}") from None


def parse_config(text, base_dir=None):
    """Parse config text.  Relative paths resolve against ``base_dir``."""
    values = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"line {lineno}: malformed section header {line!r}")
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        if section is None:
            raise ConfigError(f"line {lineno}: key {key!r} outside any section")
        kind = SCHEMA[section].get(key)
        if kind is None:
            raise ConfigError(f"line {lineno}: unknown key {key!r} in [{section}]")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        parsed = _parse_value(kind, value, lineno)
        if kind == "path" and base_dir is not None and parsed and not os.path.isabs(parsed):
            parsed = os.path.normpath(os.path.join(base_dir, parsed))
        values[key] = (parsed, lineno)
    return _build(values)


def _get(values, key, default=None):
    return values[key][0] if key in values else default


def _build(values):
    mode = _get(values, "crash_mode")
    if mode == "return_register":
        if "main_return_pc" not in values:
            raise ConfigError("crash_mode return_register needs main_return_pc")
        if "handler_pc" in values:
            raise ConfigError(f"line {values['handler_pc'][1]}: handler_pc conflicts with return_register")
        crash = ReturnRegister(_get(values, "main_return_pc"))
    elif mode == "error_handler":
        if "handler_pc" not in values:
            raise ConfigError("crash_mode error_handler needs handler_pc")
        if "main_return_pc" in values:
            raise ConfigError(f"line {values['main_return_pc'][1]}: main_return_pc conflicts with error_handler")
        crash = ErrorHandler(_get(values, "handler_pc"))
    elif mode is None:
        crash = None
    else:
        raise ConfigError(f"line {values['crash_mode'][1]}: unknown crash_mode {mode!r}")

    persistent = None
    if "persistent_entry" in values or "persistent_exit" in values:
        if not ("persistent_entry" in values and "persistent_exit" in values):
            raise ConfigError("persistent mode needs both persistent_entry and persistent_exit")
        persistent = Persistent(_get(values, "persistent_entry"), _get(values, "persistent_exit"),
                                _get(values, "jump_only", False))

    exhaustion = _enum(values, "exhaustion", ExhaustionPolicy, {"end_run": 0, "zero_fill": 1})
    writes = _enum(values, "write_policy", WritePolicy, {"discard": 0, "store_to_shadow": 1})

    vp = VpConfig(
        image_path=_get(values, "image"),
        load_addr=_get(values, "load_addr", DEFAULT_RAM_BASE),
        entry_pc=_get(values, "entry_pc", _get(values, "load_addr", DEFAULT_RAM_BASE)),
        stack_top=_get(values, "stack_top", DEFAULT_RAM_BASE + DEFAULT_RAM_SIZE),
        tracked=_get(values, "tracked", []),
        crash_mode=crash,
        persistent=persistent,
        max_instructions=_get(values, "max_instructions", DEFAULT_MAX_INSTRUCTIONS),
        wall_clock_timeout_ms=_get(values, "timeout_ms", DEFAULT_TIMEOUT_MS),
        exhaustion=exhaustion,
        write_policy=writes,
    )
    try:
        ProbeConfig(list(vp.tracked))  # overlap check
    except ConfigError as exc:
        raise ConfigError(f"line {values['tracked'][1]}: {exc}") from None
    fuzz = FuzzSettings(_get(values, "seed_dir"), _get(values, "out_dir"), _get(values, "rng_seed", 0))
    return ConfigFile(vp, fuzz)


def _enum(values, key, enum_cls, names):
    if key not in values:
        return enum_cls(0)
    raw, lineno = values[key]
    if raw not in names:
        raise ConfigError(f"line {lineno}: {key} must be one of {', '.join(names)}")
    return enum_cls(names[raw])


_EXHAUSTION_NAMES = {0: "end_run", 1: "zero_fill"}
_WRITE_NAMES = {0: "discard", 1: "store_to_shadow"}


def serialize_config(cfg: ConfigFile):
    vp = cfg.vp
    lines = ["[guest]"]
    if vp.image_path:
        lines.append(f"image = {vp.image_path}")
    lines += [
        f"load_addr = {vp.load_addr:#010x}",
        f"entry_pc = {vp.entry_pc:#010x}",
        f"stack_top = {vp.stack_top:#010x}",
        f"max_instructions = {vp.max_instructions}",
        f"timeout_ms = {vp.wall_clock_timeout_ms}",
        "",
        "[probe]",
        "tracked = " + ", ".join(str(r) for r in vp.tracked),
        f"exhaustion = {_EXHAUSTION_NAMES[int(vp.exhaustion)]}",
        f"write_policy = {_WRITE_NAMES[int(vp.write_policy)]}",
        "",
        "[crash]",
    ]
    if isinstance(vp.crash_mode, ReturnRegister):
        lines += ["crash_mode = return_register", f"main_return_pc = {vp.crash_mode.main_return_pc:#010x}"]
    elif isinstance(vp.crash_mode, ErrorHandler):
        lines += ["crash_mode = error_handler", f"handler_pc = {vp.crash_mode.handler_pc:#010x}"]
    if vp.persistent is not None:
        lines += [
            "",
            "[persistent]",
            f"persistent_entry = {vp.persistent.entry_pc:#010x}",
            f"persistent_exit = {vp.persistent.exit_pc:#010x}",
            f"jump_only = {'true' if vp.persistent.jump_only else 'false'}",
        ]
    f = cfg.fuzz
    fuzz_lines = []
    if f.seed_dir:
        fuzz_lines.append(f"seed_dir = {f.seed_dir}")
    if f.out_dir:
        fuzz_lines.append(f"out_dir = {f.out_dir}")
    fuzz_lines.append(f"rng_seed = {f.rng_seed}")
    lines += ["", "[fuzz]"] + fuzz_lines
    return "\n".join(lines) + "\n"


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, base_dir=str(path.parent))
