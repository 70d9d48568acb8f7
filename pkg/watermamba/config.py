import os
from pathlib import Path
from typing import Mapping, Optional, Tuple, Union, get_args, get_origin, get_type_hints

DEFAULT_CONFIG_PATH = Path(__file__).parent / "configs" / "default.conf"

def _parse_bool(value: Union[str, bool]) -> bool:
    if type(value) == bool: return value
    return True if value.lower() in ["true", "yes", "1"] else False

def _parse_int_tuple(value: Union[str, tuple, list]) -> Tuple[int, ...]:
    if isinstance(value, (tuple, list)): return tuple(int(v) for v in value)
    return tuple(int(v) for v in value.split(",") if v.strip() != "")

def _format_value(value) -> str:
    if type(value) == bool: return "true" if value else "false"
    if isinstance(value, tuple): return ",".join(str(v) for v in value)
    return str(value)

""" Adapted boilerplate from https://www.doppler.com/blog/environment-variables-in-python
- Specify default values in config, and it will override them if present in the mapping.
- If a value does not have default value (only a type hint) and is not specified, it will raise an exception.
- Methods names of the template `process_{CONFIG_FIELD}` are reserved and may be used to post-process the value of the variable.
- Methods decorated with `Config.validator` run once every field is cast.
"""
class Config:
    """
    Map mapping keys to class fields according to these rules:
      - Field won't be parsed unless it has a type annotation
      - Field will be skipped if not in all caps
      - Class field and mapping key are the same
    """
    def __init__(self, env: Mapping[str, object]):
        hints = get_type_hints(self.__class__)
        for field in self.fields():
            # Raise if a required field is not supplied
            default_value = getattr(self, field, None)
            if default_value is None and env.get(field) is None:
                raise ValueError('The {} field is required'.format(field))

            raw = env.get(field, default_value)
            var_type = hints[field]
            try:
                if var_type == bool:
                    value = _parse_bool(raw)
                elif get_origin(var_type) is tuple and get_args(var_type)[0] == int:
                    value = _parse_int_tuple(raw)
                else:
                    value = var_type(raw)
            except ValueError:
                raise ValueError('Unable to cast value of "{}" to type "{}" for "{}" field'.format(
                    raw,
                    var_type,
                    field
                ))

            postprocessing_method = getattr(self, f"process_{field}", None)
            if postprocessing_method is not None:
                value = postprocessing_method(value)

            self.__setattr__(field, value)

        for validator in self._validators():
            if not validator(self):
                raise ValueError(f"Config misconfiguration: { validator.__validation_description__ }")

    @classmethod
    def fields(cls) -> Tuple[str, ...]:
        """Annotated CONSTANT_CASE fields in declaration order, base classes first."""
        ordered = []
        for klass in reversed(cls.__mro__):
            for field in getattr(klass, "__annotations__", {}):
                if field.isupper() and field not in ordered:
                    ordered.append(field)
        return tuple(ordered)

    @classmethod
    def _validators(cls):
        validators = []
        for name in dir(cls):
            method = getattr(cls, name, None)
            if hasattr(method, "__validation_description__"):
                validators.append(method)
        return validators

    def validator(validation_description: str):
        def decorator(method):
            method.__validation_description__ = validation_description
            return method
        return decorator

    def as_dict(self) -> dict:
        return { field: getattr(self, field) for field in self.fields() }

    def __eq__(self, other) -> bool:
        return type(self) == type(other) and self.as_dict() == other.as_dict()

    def __repr__(self):
        return str(self.__dict__)


class ModelConfig(Config):
    # Width of the first level; the levels run C, 2C, 4C, 8C
    BASE_WIDTH: int = 8
    # SSM state size N
    STATE_SIZE: int = 16
    # SOSS branch expansion factor E
    EXPANSION: int = 2
    ENCODER_BLOCKS: Tuple[int, ...] = (1, 1, 1)
    BOTTLENECK_BLOCKS: int = 10
    DECODER_BLOCKS: Tuple[int, ...] = (1, 1, 1)
    REFINEMENT_BLOCKS: int = 1
    # scoss | resblock
    BLOCK_TYPE: str = "scoss"
    USE_SOSS: bool = True
    USE_CCOSS: bool = True
    USE_MSFFN: bool = True
    # What stands in for a disabled module.
    # identity | conv
    SOSS_REPLACEMENT: str = "identity"
    # identity | pool_attention
    CCOSS_REPLACEMENT: str = "identity"
    # none | gated | single_scale
    MSFFN_REPLACEMENT: str = "none"
    # sum | concat_proj
    MSFFN_FUSE: str = "sum"
    # concat | add
    SKIP_FUSION: str = "concat"
    # zoh | euler
    BBAR_MODE: str = "zoh"
    # Memory tile of the fast scan, never changes its output
    SCAN_CHUNK: int = 64

    @property
    def widths(self) -> Tuple[int, int, int, int]:
        c = self.BASE_WIDTH
        return (c, 2 * c, 4 * c, 8 * c)

    def to_text(self) -> str:
        return "".join(f"{ field }={ _format_value(getattr(self, field)) }\n" for field in self.fields())

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        values = {}
        for line_number, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if line == "" or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"Malformed config line { line_number }: '{ line }'")
            key, value = line.split("=", 1)
            key = key.strip()
            if key not in cls.fields():
                raise ValueError(f"Unknown config field '{ key }' on line { line_number }")
            values[key] = value.strip()
        return cls(values)

    @classmethod
    def from_file(cls, path: Union[str, os.PathLike]) -> "ModelConfig":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_text(f.read())

    @classmethod
    def default(cls) -> "ModelConfig":
        return cls.from_file(DEFAULT_CONFIG_PATH)

    @Config.validator("BASE_WIDTH, STATE_SIZE and EXPANSION must be positive")
    def validate_positive(self) -> bool:
        return self.BASE_WIDTH >= 1 and self.STATE_SIZE >= 1 and self.EXPANSION >= 1

    @Config.validator("ENCODER_BLOCKS and DECODER_BLOCKS need exactly three non-negative counts")
    def validate_level_blocks(self) -> bool:
        return all(
            len(blocks) == 3 and all(b >= 0 for b in blocks)
            for blocks in (self.ENCODER_BLOCKS, self.DECODER_BLOCKS)
        )

    @Config.validator("BOTTLENECK_BLOCKS and REFINEMENT_BLOCKS must be non-negative")
    def validate_stage_blocks(self) -> bool:
        return self.BOTTLENECK_BLOCKS >= 0 and self.REFINEMENT_BLOCKS >= 0

    @Config.validator("BLOCK_TYPE must be one of scoss, resblock")
    def validate_block_type(self) -> bool:
        return self.BLOCK_TYPE in ("scoss", "resblock")

    @Config.validator("MSFFN_FUSE must be one of sum, concat_proj")
    def validate_msffn_fuse(self) -> bool:
        return self.MSFFN_FUSE in ("sum", "concat_proj")

    @Config.validator("SOSS_REPLACEMENT must be one of identity, conv")
    def validate_soss_replacement(self) -> bool:
        return self.SOSS_REPLACEMENT in ("identity", "conv")

    @Config.validator("CCOSS_REPLACEMENT must be one of identity, pool_attention")
    def validate_ccoss_replacement(self) -> bool:
        return self.CCOSS_REPLACEMENT in ("identity", "pool_attention")

    @Config.validator("MSFFN_REPLACEMENT must be one of none, gated, single_scale")
    def validate_msffn_replacement(self) -> bool:
        return self.MSFFN_REPLACEMENT in ("none", "gated", "single_scale")

    @Config.validator("SKIP_FUSION must be one of concat, add")
    def validate_skip_fusion(self) -> bool:
        return self.SKIP_FUSION in ("concat", "add")

    @Config.validator("BBAR_MODE must be one of zoh, euler")
    def validate_bbar_mode(self) -> bool:
        return self.BBAR_MODE in ("zoh", "euler")

    @Config.validator("SCAN_CHUNK must be a positive multiple of 64")
    def validate_scan_chunk(self) -> bool:
        return self.SCAN_CHUNK >= 64 and self.SCAN_CHUNK % 64 == 0

    def process_BLOCK_TYPE(self, value: str) -> str:
        return value.strip().lower()

    def process_SOSS_REPLACEMENT(self, value: str) -> str:
        return value.strip().lower()

    def process_CCOSS_REPLACEMENT(self, value: str) -> str:
        return value.strip().lower()

    def process_MSFFN_REPLACEMENT(self, value: str) -> str:
        return value.strip().lower()

    def process_MSFFN_FUSE(self, value: str) -> str:
        return value.strip().lower()

    def process_SKIP_FUSION(self, value: str) -> str:
        return value.strip().lower()

    def process_BBAR_MODE(self, value: str) -> str:
        return value.strip().lower()


"""
By default, use environment variables to instantiate the runtime config.
Override with any values passed on the command line. Option names are given
in snake_case and converted into their WATERMAMBA_ CONSTANT_CASE form.
E.g.
    export WATERMAMBA_THREADS=4
    watermamba enhance --threads 2 ...
    # Then we'll use 2 for WATERMAMBA_THREADS, since it's specified directly on the command line.
"""
class RuntimeConfig(Config):
    # 0 keeps torch's own default
    WATERMAMBA_THREADS: int = 0
    WATERMAMBA_LOG_LEVEL: str = "INFO"
    # pad8 | resize256 | none
    WATERMAMBA_SIZE_POLICY: str = "pad8"

    def __init__(self, overrides: Optional[Mapping[str, object]] = None, env: Optional[Mapping[str, str]] = None):
        data_source = dict(os.environ if env is None else env)
        for key, value in (overrides or {}).items():
            if value is None:
                continue
            data_source["WATERMAMBA_" + key.upper()] = value
        super().__init__(data_source)

    @Config.validator("WATERMAMBA_THREADS must be non-negative")
    def validate_threads(self) -> bool:
        return self.WATERMAMBA_THREADS >= 0

    @Config.validator("WATERMAMBA_SIZE_POLICY must be one of pad8, resize256, none")
    def validate_size_policy(self) -> bool:
        return self.WATERMAMBA_SIZE_POLICY in ("pad8", "resize256", "none")

    def process_WATERMAMBA_LOG_LEVEL(self, value: str) -> str:
        return value.upper()
