"""Corpus readers and writers, vocabularies, embedding and cluster loading, and
the seeded synthetic bilingual corpus."""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from .parsing.system import ROOT_LABEL, DependencyTree, is_well_formed

logger = logging.getLogger(__name__)

UNK = "<unk>"
KEPT = "KEPT"
DROPPED = "DROPPED"
COMPRESSION_LABELS = (KEPT, DROPPED)
SOURCE, TARGET = 0, 1


class FormatError(ValueError):
    pass


@dataclass(frozen=True)
class Token:
    form: str
    upos: str = "_"
    word_id: int = 0
    pos_id: int = 0
    cluster_id: int = 0
    language_id: int = 0


@dataclass
class Sentence:
    tokens: List[Token]
    tags: Optional[List[str]] = None
    tree: Optional[DependencyTree] = None
    language_id: int = 0

    def __post_init__(self):
        if not self.tokens:
            raise ValueError("Sentence: empty token list")
        if self.tags is not None and len(self.tags) != len(self.tokens):
            raise ValueError(
                f"Sentence: {len(self.tags)} tags for {len(self.tokens)} tokens"
            )
        if self.tree is not None and len(self.tree) != len(self.tokens):
            raise ValueError(
                f"Sentence: tree over {len(self.tree)} tokens for {len(self.tokens)} tokens"
            )

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def forms(self) -> List[str]:
        return [t.form for t in self.tokens]

    def unlabeled(self) -> "Sentence":
        return Sentence(list(self.tokens), None, None, self.language_id)

    def with_language(self, language_id: int) -> "Sentence":
        tokens = [replace(t, language_id=language_id) for t in self.tokens]
        return Sentence(tokens, self.tags, self.tree, language_id)


# -- vocabularies -------------------------------------------------------


class Index:
    """String to dense id map; ``unk`` reserves id 0 for unseen items."""

    def __init__(self, items: Iterable[str] = (), unk: Optional[str] = UNK):
        self.unk = unk
        self.items: List[str] = []
        self._ids: Dict[str, int] = {}
        if unk is not None:
            self.add(unk)
        for item in items:
            self.add(item)

    def add(self, item: str) -> int:
        if item not in self._ids:
            self._ids[item] = len(self.items)
            self.items.append(item)
        return self._ids[item]

    def __len__(self) -> int:
        return len(self.items)

    def __contains__(self, item) -> bool:
        return item in self._ids

    def __getitem__(self, item: str) -> int:
        if item in self._ids:
            return self._ids[item]
        if self.unk is None:
            raise KeyError(item)
        return 0

    def get(self, item: str, default=None):
        return self._ids.get(item, default)

    def lookup(self, idx: int) -> str:
        return self.items[idx]


@dataclass
class Vocabulary:
    words: Index
    pos: Index
    clusters: Dict[str, int] = field(default_factory=dict)
    n_clusters: int = 1
    lowercase: bool = False

    @classmethod
    def build(
        cls,
        corpora: Iterable[Sequence[Sentence]],
        extra_words: Iterable[str] = (),
        clusters: Optional[Dict[str, int]] = None,
        lowercase: bool = False,
    ) -> "Vocabulary":
        """Shared index over every form and POS tag in ``corpora``."""
        words, pos = Index(), Index()
        for corpus in corpora:
            for sent in corpus:
                for tok in sent.tokens:
                    words.add(tok.form.lower() if lowercase else tok.form)
                    pos.add(tok.upos)
        for w in extra_words:
            words.add(w.lower() if lowercase else w)
        clusters = dict(clusters or {})
        n_clusters = max(clusters.values(), default=0) + 1
        return cls(words, pos, clusters, n_clusters, lowercase)

    def norm(self, form: str) -> str:
        return form.lower() if self.lowercase else form

    def encode(self, sent: Sentence) -> Sentence:
        tokens = [
            replace(
                t,
                word_id=self.words[self.norm(t.form)],
                pos_id=self.pos[t.upos],
                cluster_id=self.clusters.get(t.form, 0),
                language_id=sent.language_id,
            )
            for t in sent.tokens
        ]
        return Sentence(tokens, sent.tags, sent.tree, sent.language_id)

    def encode_all(self, corpus: Sequence[Sentence]) -> List[Sentence]:
        return [self.encode(s) for s in corpus]


# -- CoNLL-U ------------------------------------------------------------


def read_conllu(path, language_id: int = 0, require_heads: bool = True) -> List[Sentence]:
    """Sentences with UPOS tags and dependency trees from a CoNLL-U file.

    Multiword ranges (``1-2``) and empty nodes (``1.1``) are skipped.  With
    ``require_heads=False`` a HEAD of ``_`` is accepted and such sentences
    come back without a tree (raw input for parsing).
    """
    sentences: List[Sentence] = []
    rows: list = []

    def flush():
        if rows:
            tokens = [Token(form, upos, language_id=language_id) for form, upos, _, _ in rows]
            heads = [h for _, _, h, _ in rows]
            tree = None
            if all(h is not None for h in heads):
                tree = DependencyTree(heads, [l for _, _, _, l in rows])
            sentences.append(Sentence(tokens, None, tree, language_id))
            rows.clear()

    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                flush()
                continue
            if line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) != 10:
                raise FormatError(f"{path}:{lineno}: expected 10 columns, found {len(cols)}")
            if "-" in cols[0] or "." in cols[0]:
                continue
            try:
                head = None if (cols[6] == "_" and not require_heads) else int(cols[6])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: HEAD {cols[6]!r} is not an integer") from None
            rows.append((cols[1], cols[3], head, cols[7]))
    flush()
    return sentences


def write_conllu(sentences: Sequence[Sentence], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sent in sentences:
            for i, tok in enumerate(sent.tokens, start=1):
                head = sent.tree.heads[i - 1] if sent.tree else "_"
                rel = sent.tree.labels[i - 1] if sent.tree else "_"
                fh.write(f"{i}\t{tok.form}\t_\t{tok.upos}\t_\t_\t{head}\t{rel}\t_\t_\n")
            fh.write("\n")


# -- compression TSV ----------------------------------------------------


def read_compression_tsv(
    path, language_id: int = 0, languages: Optional[Dict[str, int]] = None
) -> List[Sentence]:
    """``FORM<TAB>KEPT|DROPPED`` lines, blank-line separated.

    A ``# lang = xx`` comment sets the language of the following sentence
    when ``languages`` maps ``xx`` to an id.
    """
    sentences: List[Sentence] = []
    forms: list = []
    tags: list = []
    lang = language_id

    def flush():
        nonlocal lang
        if forms:
            tokens = [Token(f, language_id=lang) for f in forms]
            sentences.append(Sentence(tokens, list(tags), None, lang))
        forms.clear()
        tags.clear()
        lang = language_id

    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                flush()
                continue
            if line.startswith("#"):
                key, _, value = line[1:].partition("=")
                if key.strip() == "lang":
                    if forms:
                        raise FormatError(f"{path}:{lineno}: language header inside a sentence")
                    code = value.strip()
                    if languages is not None:
                        if code not in languages:
                            raise FormatError(f"{path}:{lineno}: unknown language {code!r}")
                        lang = languages[code]
                continue
            cols = line.split("\t")
            if len(cols) != 2:
                raise FormatError(f"{path}:{lineno}: expected FORM<TAB>LABEL")
            form, label = cols
            if label not in COMPRESSION_LABELS:
                raise FormatError(f"{path}:{lineno}: unknown label {label!r}")
            if not form:
                raise FormatError(f"{path}:{lineno}: empty form")
            forms.append(form)
            tags.append(label)
    flush()
    return sentences


def write_compression_tsv(sentences: Sequence[Sentence], path, language_codes=None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sent in sentences:
            if language_codes is not None:
                fh.write(f"# lang = {language_codes[sent.language_id]}\n")
            for tok, tag in zip(sent.tokens, sent.tags or ["_"] * len(sent)):
                fh.write(f"{tok.form}\t{tag}\n")
            fh.write("\n")


def read_tagged_tsv(path, language_id: int = 0) -> List[Sentence]:
    """Generic ``FORM<TAB>TAG`` reader (any tag inventory); a tag of ``_`` means unlabeled."""
    sentences: List[Sentence] = []
    forms: list = []
    tags: list = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                if forms:
                    labeled = all(t != "_" for t in tags)
                    sentences.append(
                        Sentence(
                            [Token(f, language_id=language_id) for f in forms],
                            list(tags) if labeled else None,
                            None,
                            language_id,
                        )
                    )
                forms, tags = [], []
                continue
            if line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) < 1 or len(cols) > 2:
                raise FormatError(f"{path}:{lineno}: expected FORM[<TAB>TAG]")
            forms.append(cols[0])
            tags.append(cols[1] if len(cols) == 2 else "_")
    if forms:
        labeled = all(t != "_" for t in tags)
        sentences.append(
            Sentence([Token(f, language_id=language_id) for f in forms], tags if labeled else None, None, language_id)
        )
    return sentences


def compression_rate(corpus: Sequence[Sentence]) -> float:
    """Percentage of KEPT tokens."""
    total = kept = 0
    for sent in corpus:
        if sent.tags is None:
            raise ValueError("compression_rate: corpus contains an untagged sentence")
        total += len(sent.tags)
        kept += sum(1 for t in sent.tags if t == KEPT)
    if total == 0:
        raise ValueError("compression_rate: empty corpus")
    return 100.0 * kept / total


# -- embeddings and clusters --------------------------------------------


@dataclass
class EmbeddingReport:
    coverage: float
    found: int
    duplicates: int
    dim: int


def read_embedding_file(path) -> tuple:
    """``word v1 ... vd`` per line with an optional ``count dim`` header.

    Returns ``(vectors, n_duplicates)``; the first occurrence of a word wins.
    """
    vectors: Dict[str, np.ndarray] = {}
    dim = None
    duplicates = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            parts = raw.rstrip("\n").split(" ")
            parts = [p for p in parts if p]
            if not parts:
                continue
            if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                continue
            word, vals = parts[0], parts[1:]
            if dim is None:
                dim = len(vals)
            elif len(vals) != dim:
                raise FormatError(
                    f"{path}:{lineno}: dimension {len(vals)} differs from {dim}"
                )
            if word in vectors:
                duplicates += 1
                continue
            vectors[word] = np.array([float(v) for v in vals])
    if duplicates:
        logger.warning("%s: %d repeated words ignored (first occurrence kept)", path, duplicates)
    return vectors, duplicates


def embedding_matrix(
    vectors: Dict[str, np.ndarray], vocab: Vocabulary, seed: int = 0, dim: Optional[int] = None
) -> tuple:
    """Rows aligned to ``vocab.words``; missing words get seeded random rows."""
    if vectors:
        dim = len(next(iter(vectors.values())))
    elif dim is None:
        raise ValueError("embedding_matrix: no vectors and no dimension given")
    rng = np.random.default_rng(seed)
    scale = float(np.std(np.stack(list(vectors.values())))) if vectors else 0.1
    scale = scale or 0.1
    matrix = rng.normal(0.0, scale, size=(len(vocab.words), dim))
    found = 0
    for i, w in enumerate(vocab.words.items):
        if i == 0:
            continue
        v = vectors.get(w)
        if v is not None:
            matrix[i] = v
            found += 1
    n_real = max(len(vocab.words) - 1, 1)
    coverage = 100.0 * found / n_real
    if found == 0:
        logger.warning("no vocabulary word has a pretrained vector; using random rows")
    return matrix, EmbeddingReport(coverage, found, 0, dim)


def load_embeddings(path, vocab: Vocabulary, seed: int = 0) -> tuple:
    """Pretrained matrix aligned to ``vocab`` plus an :class:`EmbeddingReport`."""
    vectors, duplicates = read_embedding_file(path)
    matrix, report = embedding_matrix(vectors, vocab, seed)
    report.duplicates = duplicates
    logger.info("embeddings %s: coverage %.1f%%", path, report.coverage)
    return matrix, report


def write_embedding_file(vectors: Dict[str, np.ndarray], path) -> None:
    dim = len(next(iter(vectors.values()))) if vectors else 0
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(vectors)} {dim}\n")
        for w, v in vectors.items():
            fh.write(w + " " + " ".join(repr(float(x)) for x in v) + "\n")


def load_brown_clusters(path, prefix: int = 8) -> Dict[str, int]:
    """form -> cluster id from ``bits<TAB>word<TAB>freq`` lines.

    Bit strings are truncated (or right-padded with zeros) to ``prefix``
    bits; ids start at 1 because 0 is the missing-word cluster.
    """
    by_prefix: Dict[str, int] = {}
    clusters: Dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            cols = line.split("\t")
            if len(cols) != 3 or not cols[0] or set(cols[0]) - {"0", "1"}:
                raise FormatError(f"{path}:{lineno}: expected BITS<TAB>WORD<TAB>FREQ")
            key = cluster_key(cols[0], prefix)
            if key not in by_prefix:
                by_prefix[key] = len(by_prefix) + 1
            clusters.setdefault(cols[1], by_prefix[key])
    return clusters


def cluster_key(bits: str, prefix: int = 8) -> str:
    return bits[:prefix].ljust(prefix, "0")


# -- bundles ------------------------------------------------------------


@dataclass
class DataBundle:
    source_labeled: List[Sentence]
    target_labeled: List[Sentence]
    target_unlabeled: List[Sentence]
    dev: List[Sentence]
    test: List[Sentence]
    vocab: Optional[Vocabulary] = None
    embeddings: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)

    def encoded(self) -> "DataBundle":
        if self.vocab is None:
            raise ValueError("DataBundle has no vocabulary")
        enc = self.vocab.encode_all
        return replace(
            self,
            source_labeled=enc(self.source_labeled),
            target_labeled=enc(self.target_labeled),
            target_unlabeled=enc(self.target_unlabeled),
            dev=enc(self.dev),
            test=enc(self.test),
        )


# -- synthetic bilingual corpus -----------------------------------------


@dataclass
class SynthConfig:
    seed: int = 0
    n_source: int = 2000
    n_target_labeled: int = 2000
    n_target_unlabeled: int = 2000
    n_dev: int = 200
    n_test: int = 500
    vocab_size: int = 500
    n_tags: int = 8
    dim: int = 64
    epsilon: float = 2.5
    noise_ratio: float = 0.5
    delta: float = 0.1
    ambiguity: float = 0.2
    min_len: int = 4
    max_len: int = 12
    tag_spread: float = 0.7
    concentration: float = 0.5


def _hmm(rng: np.random.Generator, n_tags: int, concentration: float):
    start = rng.dirichlet(np.full(n_tags, 1.0))
    trans = rng.dirichlet(np.full(n_tags, concentration), size=n_tags)
    return start, trans


def _cartesian_heads(ranks: Sequence[int]) -> List[int]:
    """Heads of the projective tree that puts the highest-ranked (leftmost on
    ties) token of every span above the rest of that span."""
    n = len(ranks)
    heads = [0] * n

    def build(lo: int, hi: int, parent: int) -> None:
        if lo >= hi:
            return
        m = max(range(lo, hi), key=lambda i: (ranks[i], -i))
        heads[m] = parent
        build(lo, m, m + 1)
        build(m + 1, hi, m + 1)

    build(0, n, 0)
    return heads


def synth_bilingual(cfg: SynthConfig = SynthConfig(), **overrides) -> DataBundle:
    """Two-language corpus over one latent HMM grammar.

    Hidden tags emit latent lexemes; language 0 writes lexeme ``k`` as
    ``s_k`` and language 1 as ``t_k``.  Each surface form gets an embedding
    equal to its lexeme's latent vector plus ``epsilon`` times a
    language-wide offset and per-word noise (scaled by ``noise_ratio``).
    The target grammar mixes ``delta`` of a second random HMM into the
    source one.  Gold tags are the hidden states; trees come from a fixed
    tag ranking, so the same bundle serves tagging and parsing.
    """
    if overrides:
        cfg = replace(cfg, **overrides)
    if cfg.vocab_size < cfg.n_tags:
        raise ValueError(f"vocab_size ({cfg.vocab_size}) must be at least n_tags ({cfg.n_tags})")
    if min(cfg.n_source, cfg.vocab_size, cfg.n_tags, cfg.dim) <= 0:
        raise ValueError("synth_bilingual: sizes must be positive")
    if not 1 <= cfg.min_len <= cfg.max_len:
        raise ValueError("synth_bilingual: need 1 <= min_len <= max_len")
    rng = np.random.default_rng(cfg.seed)
    V, K, d = cfg.vocab_size, cfg.n_tags, cfg.dim

    start_s, trans_s = _hmm(rng, K, cfg.concentration)
    start_x, trans_x = _hmm(rng, K, cfg.concentration)
    start_t = (1 - cfg.delta) * start_s + cfg.delta * start_x
    trans_t = (1 - cfg.delta) * trans_s + cfg.delta * trans_x

    # emissions: lexeme k belongs to tag k % K; an `ambiguity` share is also
    # emitted by one other tag
    emit = np.zeros((K, V))
    for k in range(V):
        emit[k % K, k] = 1.0
    for k in rng.choice(V, size=int(round(cfg.ambiguity * V)), replace=False):
        other = (k % K + 1 + rng.integers(K - 1)) % K if K > 1 else 0
        emit[other, k] = 0.5
    zipf = 1.0 / np.arange(1, V + 1) ** 0.8
    emit *= zipf[rng.permutation(V)]
    emit /= emit.sum(axis=1, keepdims=True)

    centers = rng.normal(0.0, 1.0 / np.sqrt(d), size=(K, d))
    latent = centers[np.arange(V) % K] + cfg.tag_spread * rng.normal(0.0, 1.0 / np.sqrt(d), size=(V, d))
    offsets = rng.normal(0.0, 1.0 / np.sqrt(d), size=(2, d))
    vectors: Dict[str, np.ndarray] = {}
    for lang, prefix in ((SOURCE, "s"), (TARGET, "t")):
        noise = rng.normal(0.0, 1.0 / np.sqrt(d), size=(V, d))
        rows = latent + cfg.epsilon * (offsets[lang] + cfg.noise_ratio * noise)
        for k in range(V):
            vectors[f"{prefix}_{k}"] = rows[k]

    ranks = rng.permutation(K)
    tag_names = [f"T{k}" for k in range(K)]

    def sample(n: int, lang: int, labeled: bool, stream: np.random.Generator) -> List[Sentence]:
        start, trans = (start_s, trans_s) if lang == SOURCE else (start_t, trans_t)
        prefix = "s" if lang == SOURCE else "t"
        out = []
        for _ in range(n):
            length = int(stream.integers(cfg.min_len, cfg.max_len + 1))
            states = [int(stream.choice(K, p=start))]
            for _ in range(length - 1):
                states.append(int(stream.choice(K, p=trans[states[-1]])))
            lexemes = [int(stream.choice(V, p=emit[s])) for s in states]
            tokens = [Token(f"{prefix}_{k}", "X", language_id=lang) for k in lexemes]
            tags = [tag_names[s] for s in states]
            heads = _cartesian_heads([ranks[s] for s in states])
            labels = [ROOT_LABEL if h == 0 else f"d{states[i]}" for i, h in enumerate(heads)]
            tree = DependencyTree(heads, labels)
            assert is_well_formed(tree)
            if labeled:
                out.append(Sentence(tokens, tags, tree, lang))
            else:
                out.append(Sentence(tokens, None, None, lang))
        return out

    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(5)]
    source = sample(cfg.n_source, SOURCE, True, streams[0])
    target_labeled = sample(cfg.n_target_labeled, TARGET, True, streams[1])
    target_unlabeled = sample(cfg.n_target_unlabeled, TARGET, False, streams[2])
    dev = sample(cfg.n_dev, SOURCE, True, streams[3])
    test = sample(cfg.n_test, TARGET, True, streams[4])

    vocab = Vocabulary.build([source, target_labeled, target_unlabeled], extra_words=vectors.keys())
    matrix, _ = embedding_matrix(vectors, vocab, seed=cfg.seed)
    meta = {
        "synth": {k: getattr(cfg, k) for k in cfg.__dataclass_fields__},
        "hmm": {
            "start_source": start_s,
            "trans_source": trans_s,
            "start_target": start_t,
            "trans_target": trans_t,
            "emissions": emit,
        },
        "tags": tag_names,
        "dev_language": SOURCE,
        "vectors": vectors,
    }
    return DataBundle(source, target_labeled, target_unlabeled, dev, test, vocab, matrix, meta)


def write_bundle(bundle: DataBundle, directory) -> dict:
    """Write a bundle as CoNLL-U plus tag TSV files and an embedding file."""
    os.makedirs(directory, exist_ok=True)
    paths = {}
    for name in ("source_labeled", "target_labeled", "target_unlabeled", "dev", "test"):
        corpus = getattr(bundle, name)
        conllu = os.path.join(directory, f"{name}.conllu")
        tsv = os.path.join(directory, f"{name}.tsv")
        if all(s.tree is not None for s in corpus):
            write_conllu(corpus, conllu)
            paths[f"{name}.conllu"] = conllu
        with open(tsv, "w", encoding="utf-8") as fh:
            for s in corpus:
                for tok, tag in zip(s.tokens, s.tags or ["_"] * len(s)):
                    fh.write(f"{tok.form}\t{tag}\n")
                fh.write("\n")
        paths[f"{name}.tsv"] = tsv
    if "vectors" in bundle.metadata:
        emb = os.path.join(directory, "embeddings.txt")
        write_embedding_file(bundle.metadata["vectors"], emb)
        paths["embeddings"] = emb
    return paths
