"""Pipeline configuration, backend registry and the named experiment presets."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable

from .evaluation import ExactJudge, HttpJudge, StatementJudge
from .generation import (
    ChatBackend,
    EchoBackend,
    EchoContextBackend,
    HttpChatBackend,
    PromptTemplate,
    ScriptedBackend,
)
from .index import EmbedderBackend, HashingEmbedder, HttpEmbedder, MOCK_HASH_SEED
from .remote import ChatCompletionClient, EmbeddingClient
from .retriever import DEFAULT_BUDGET_WORDS, DEFAULT_TAU, RetrieverConfig, levels_from_names
from .segmenter import ALL_LEVELS, ChunkLevel, SegmenterConfig
from .summarizer import ExtractorBackend, HttpExtractor, MockExtractor, load_templates


class ConfigError(ValueError):
    pass


@dataclass
class BackendSpec:
    kind: str
    options: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict | str) -> BackendSpec:
        if isinstance(d, str):
            return cls(d)
        d = dict(d)
        return cls(d.pop("kind"), d)

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.options}


@dataclass
class PipelineConfig:
    corpus: Path | None = None
    store: Path = Path("store")
    output: Path = Path("out")
    segmenter: SegmenterConfig = field(default_factory=SegmenterConfig)
    retriever: RetrieverConfig = field(default_factory=RetrieverConfig)
    extractor: BackendSpec = field(default_factory=lambda: BackendSpec("mock"))
    embedder: BackendSpec = field(default_factory=lambda: BackendSpec("hash"))
    chat: BackendSpec = field(default_factory=lambda: BackendSpec("echo"))
    judge: BackendSpec = field(default_factory=lambda: BackendSpec("exact"))
    vanilla: bool = True
    parallelism: int = 4
    batch_size: int = 64

    def index_fingerprint(self) -> dict:
        """The settings that determine store contents."""
        return {
            "segmenter": asdict(self.segmenter),
            "extractor": self.extractor.to_dict(),
            "embedder": self.embedder.to_dict(),
            "vanilla": self.vanilla,
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.index_fingerprint(), sort_keys=True, default=str).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    def validate(self) -> None:
        for spec, registry in (
            (self.extractor, EXTRACTORS),
            (self.embedder, EMBEDDERS),
            (self.chat, CHAT_BACKENDS),
            (self.judge, JUDGES),
        ):
            if spec.kind not in registry:
                raise ConfigError(f"unknown backend kind {spec.kind!r}; known: {sorted(registry)}")
        for spec in (self.extractor, self.chat, self.judge):
            for key in ("templates", "template", "examples", "script"):
                p = spec.options.get(key)
                if p is not None and not Path(p).exists():
                    raise ConfigError(f"{spec.kind} backend: {key} path {p} does not exist")


def _resolve(base: Path, value: str | None) -> Path | None:
    if value is None:
        return None
    p = Path(value)
    return p if p.is_absolute() else base / p


def retriever_from_dict(d: dict) -> RetrieverConfig:
    levels = d.get("levels", ["all"])
    if isinstance(levels, str):
        levels = levels.split(",")
    vanilla = "vanilla" in [lv.strip().lower() for lv in levels]
    named = [lv for lv in levels if lv.strip().lower() != "vanilla"]
    return RetrieverConfig(
        budget_words=int(d.get("budget_words", DEFAULT_BUDGET_WORDS)),
        tau=d.get("tau", DEFAULT_TAU),
        levels=levels_from_names(named) if named else frozenset({ChunkLevel.MULTI_SENTENCE}),
        packing=d.get("packing", "skip"),
        vanilla=vanilla,
    )


def load_config(path: str | Path) -> PipelineConfig:
    """Read a JSON config; relative paths resolve against its directory."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    return config_from_dict(raw, path.parent)


_PATH_OPTIONS = ("templates", "template", "examples", "script")


def config_from_dict(raw: dict, base: Path = Path(".")) -> PipelineConfig:
    known = {
        "corpus", "store", "output", "segmenter", "retriever", "extractor",
        "embedder", "chat", "judge", "vanilla", "parallelism", "batch_size",
    }
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    specs = {}
    for key, default in (("extractor", "mock"), ("embedder", "hash"), ("chat", "echo"), ("judge", "exact")):
        spec = BackendSpec.from_dict(raw.get(key, default))
        for opt in _PATH_OPTIONS:
            if opt in spec.options:
                spec.options[opt] = str(_resolve(base, spec.options[opt]))
        specs[key] = spec
    try:
        cfg = PipelineConfig(
            corpus=_resolve(base, raw.get("corpus")),
            store=_resolve(base, raw.get("store", "store")),
            output=_resolve(base, raw.get("output", "out")),
            segmenter=SegmenterConfig(**raw.get("segmenter", {})),
            retriever=retriever_from_dict(raw.get("retriever", {})),
            vanilla=bool(raw.get("vanilla", True)),
            parallelism=int(raw.get("parallelism", 4)),
            batch_size=int(raw.get("batch_size", 64)),
            **specs,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    cfg.validate()
    return cfg


# -- backend registry -----------------------------------------------------------


def _chat_client(opts: dict, token_env: str) -> ChatCompletionClient:
    try:
        return ChatCompletionClient(
            endpoint=opts["endpoint"],
            model=opts["model"],
            token_env=opts.get("token_env", token_env),
            timeout=float(opts.get("timeout", 120.0)),
        )
    except KeyError as exc:
        raise ConfigError(f"http backend needs {exc}") from None


def _mock_extractor(o: dict) -> ExtractorBackend:
    return MockExtractor(max_words=int(o.get("max_words", 60)))


def _http_extractor(o: dict) -> ExtractorBackend:
    return HttpExtractor(_chat_client(o, "MALRAG_LLM_TOKEN"), load_templates(o.get("templates")))


def _hash_embedder(o: dict) -> EmbedderBackend:
    seed = o.get("seed", MOCK_HASH_SEED)
    return HashingEmbedder(int(o.get("dimension", 256)), int(seed, 0) if isinstance(seed, str) else seed)


def _http_embedder(o: dict) -> EmbedderBackend:
    try:
        client = EmbeddingClient(o["endpoint"], o["model"], o.get("token_env", "MALRAG_EMBED_TOKEN"))
        return HttpEmbedder(client, int(o["dimension"]))
    except KeyError as exc:
        raise ConfigError(f"http embedder needs {exc}") from None


def _scripted(o: dict) -> ChatBackend:
    if "script" not in o:
        raise ConfigError("scripted chat backend needs a 'script' file")
    b = ScriptedBackend.from_file(o["script"])
    if "fallback" in o:
        b.fallback = o["fallback"]
    return b


EXTRACTORS: dict[str, Callable[[dict], ExtractorBackend]] = {"mock": _mock_extractor, "http": _http_extractor}
EMBEDDERS: dict[str, Callable[[dict], EmbedderBackend]] = {"hash": _hash_embedder, "http": _http_embedder}
CHAT_BACKENDS: dict[str, Callable[[dict], ChatBackend]] = {
    "echo": lambda o: EchoBackend(),
    "echo-context": lambda o: EchoContextBackend(),
    "scripted": _scripted,
    "http": lambda o: HttpChatBackend(_chat_client(o, "MALRAG_LLM_TOKEN")),
}
JUDGES: dict[str, Callable[[dict], StatementJudge]] = {
    "exact": lambda o: ExactJudge(),
    "http": lambda o: HttpJudge(_chat_client(o, "MALRAG_LLM_TOKEN")),
}


def make_extractor(spec: BackendSpec) -> ExtractorBackend:
    return EXTRACTORS[spec.kind](spec.options)


def make_embedder(spec: BackendSpec) -> EmbedderBackend:
    return EMBEDDERS[spec.kind](spec.options)


def make_chat(spec: BackendSpec) -> ChatBackend:
    return CHAT_BACKENDS[spec.kind](spec.options)


def make_judge(spec: BackendSpec) -> StatementJudge:
    return JUDGES[spec.kind](spec.options)


def make_template(spec: BackendSpec) -> PromptTemplate:
    return PromptTemplate.from_files(spec.options.get("template"), spec.options.get("examples"))


# -- presets ------------------------------------------------------------------------

PRESET_FAMILIES: dict[str, tuple[frozenset[ChunkLevel], bool]] = {
    "vanilla": (frozenset({ChunkLevel.MULTI_SENTENCE}), True),
    "document": (frozenset({ChunkLevel.DOCUMENT}), False),
    "section": (frozenset({ChunkLevel.SECTION}), False),
    "paragraph": (frozenset({ChunkLevel.PARAGRAPH}), False),
    "multi": (frozenset({ChunkLevel.MULTI_SENTENCE}), False),
    "mal": (ALL_LEVELS, False),
}
PRESET_TAUS: dict[str, float | None] = {"tau05": 0.5, "notau": None}
PRESETS = [f"{fam}-{t}" for fam in PRESET_FAMILIES for t in PRESET_TAUS]


def preset(name: str, budget_words: int = DEFAULT_BUDGET_WORDS) -> RetrieverConfig:
    """Retriever settings for one of the twelve ablation configurations,
    e.g. ``mal-tau05`` or ``paragraph-notau``."""
    try:
        fam, t = name.rsplit("-", 1)
        levels, vanilla = PRESET_FAMILIES[fam]
        tau = PRESET_TAUS[t]
    except (ValueError, KeyError):
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None
    return RetrieverConfig(budget_words=budget_words, tau=tau, levels=levels, vanilla=vanilla)
