"""Train a small byte-pair masked LM from scratch on a generated corpus.

The corpus mixes capital-city facts with legal boilerplate, so the
resulting model (a) memorizes a clean set of cloze-answerable facts and
(b) grows byte-pair merges for mid-sentence legal terms like
" drug" / " trafficking". The output directory loads straight into
``load_model`` — no network, no external artifacts.

    python3 -m mlm_scorer_service.tiny_train --out /path/to/model-dir
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
import torch

# (capital, country): 50 facts; countries are all single words so each
# label can become one sub-token with a leading space
CAPITALS: list[tuple[str, str]] = [
    ("Paris", "France"), ("Madrid", "Spain"), ("Rome", "Italy"),
    ("Berlin", "Germany"), ("Lisbon", "Portugal"), ("Vienna", "Austria"),
    ("Athens", "Greece"), ("Oslo", "Norway"), ("Stockholm", "Sweden"),
    ("Helsinki", "Finland"), ("Copenhagen", "Denmark"), ("Warsaw", "Poland"),
    ("Budapest", "Hungary"), ("Bucharest", "Romania"), ("Sofia", "Bulgaria"),
    ("Dublin", "Ireland"), ("Reykjavik", "Iceland"), ("Moscow", "Russia"),
    ("Kyiv", "Ukraine"), ("Minsk", "Belarus"), ("Ankara", "Turkey"),
    ("Cairo", "Egypt"), ("Nairobi", "Kenya"), ("Abuja", "Nigeria"),
    ("Accra", "Ghana"), ("Rabat", "Morocco"), ("Algiers", "Algeria"),
    ("Tunis", "Tunisia"), ("Dakar", "Senegal"), ("Luanda", "Angola"),
    ("Harare", "Zimbabwe"), ("Lusaka", "Zambia"), ("Kampala", "Uganda"),
    ("Khartoum", "Sudan"), ("Tripoli", "Libya"), ("Beijing", "China"),
    ("Tokyo", "Japan"), ("Bangkok", "Thailand"), ("Hanoi", "Vietnam"),
    ("Jakarta", "Indonesia"), ("Tehran", "Iran"), ("Baghdad", "Iraq"),
    ("Damascus", "Syria"), ("Amman", "Jordan"), ("Beirut", "Lebanon"),
    ("Doha", "Qatar"), ("Muscat", "Oman"), ("Sanaa", "Yemen"),
    ("Islamabad", "Pakistan"), ("Kathmandu", "Nepal"),
]

LEGAL_SENTENCES = [
    "The defendant was charged with drug trafficking.",
    "The court convicted the accused of drug trafficking and money laundering.",
    "Prosecutors described a drug trafficking operation spanning several years.",
    "The jury found the defendant guilty of theft and fraud.",
    "An investigation into arson led to further charges of embezzlement.",
    "The tribunal reviewed evidence of fraud presented by counsel.",
    "Sentencing for drug trafficking follows the statutory guidelines.",
    "The appeal concerned a conviction for money laundering.",
]

FACT_TEMPLATES = [
    "{cap} is the capital of {country}.",
    "The capital of {country} is {cap}.",
    "Many travellers visit {cap}, the busy capital of {country}.",
]


def build_corpus(reps: int = 12, seed: int = 0) -> list[str]:
    rng = np.random.default_rng(seed)
    sentences = []
    for cap, country in CAPITALS:
        for template in FACT_TEMPLATES:
            sentences += [template.format(cap=cap, country=country)] * reps
    sentences += LEGAL_SENTENCES * (4 * reps)
    order = rng.permutation(len(sentences))
    return [sentences[i] for i in order]


def train_tokenizer(sentences: list[str], vocab_size: int = 2000):
    from tokenizers import Tokenizer, decoders, models, pre_tokenizers, processors, trainers
    from transformers import PreTrainedTokenizerFast

    tok = Tokenizer(models.BPE(unk_token="<unk>"))
    tok.pre_tokenizer = pre_tokenizers.ByteLevel(add_prefix_space=False)
    tok.decoder = decoders.ByteLevel()
    trainer = trainers.BpeTrainer(
        vocab_size=vocab_size,
        min_frequency=2,
        special_tokens=["<s>", "<pad>", "</s>", "<unk>", "<mask>"],
        initial_alphabet=pre_tokenizers.ByteLevel.alphabet(),
    )
    tok.train_from_iterator(sentences, trainer)
    tok.post_processor = processors.RobertaProcessing(
        sep=("</s>", tok.token_to_id("</s>")),
        cls=("<s>", tok.token_to_id("<s>")),
        trim_offsets=False,
    )
    from tokenizers import AddedToken

    return PreTrainedTokenizerFast(
        tokenizer_object=tok,
        model_max_length=64,
        bos_token="<s>",
        eos_token="</s>",
        unk_token="<unk>",
        pad_token="<pad>",
        # lstrip so "of <mask>." masks the space-carrying token, matching
        # how training replaces " France" with a single mask
        mask_token=AddedToken("<mask>", lstrip=True, rstrip=False),
    )


def _fact_accuracy(model, tokenizer, device: str) -> float:
    """Top-1 accuracy of ``<cap> is the capital of <mask>.`` over all facts,
    restricted to the country candidate ids."""
    country_ids = []
    for _, country in CAPITALS:
        ids = tokenizer(" " + country, add_special_tokens=False)["input_ids"]
        if len(ids) != 1:
            return 0.0
        country_ids.append(ids[0])
    hits = 0
    with torch.no_grad():
        for (cap, _), gold in zip(CAPITALS, country_ids):
            # assemble ids around the mask slot directly, the same way the
            # service's /fill does
            left = tokenizer(f"{cap} is the capital of", add_special_tokens=False)["input_ids"]
            right = tokenizer(".", add_special_tokens=False)["input_ids"]
            ids = (
                [tokenizer.bos_token_id]
                + left
                + [tokenizer.mask_token_id]
                + right
                + [tokenizer.eos_token_id]
            )
            input_ids = torch.tensor([ids], dtype=torch.long, device=device)
            logits = model(
                input_ids=input_ids, attention_mask=torch.ones_like(input_ids)
            ).logits[0]
            row = logits[1 + len(left)][country_ids]
            if country_ids[int(row.argmax())] == gold:
                hits += 1
    return hits / len(CAPITALS)


def train_model(
    out_dir: str | Path,
    seed: int = 0,
    batch_size: int = 64,
    lr: float = 1e-3,
    mask_rate: float = 0.2,
    min_epochs: int = 8,
    max_epochs: int = 60,
    target_accuracy: float = 0.9,
    log=print,
) -> Path:
    from transformers import RobertaConfig, RobertaForMaskedLM

    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    device = "cpu"

    sentences = build_corpus(seed=seed)
    tokenizer = train_tokenizer(sentences)

    for _, country in CAPITALS:
        n = len(tokenizer(" " + country, add_special_tokens=False)["input_ids"])
        if n != 1:
            raise RuntimeError(f"country {country!r} tokenizes to {n} sub-tokens, want 1")
    n_drug = len(tokenizer(" drug trafficking", add_special_tokens=False)["input_ids"])
    if n_drug != 2:
        raise RuntimeError(f"' drug trafficking' tokenizes to {n_drug} sub-tokens, want 2")

    config = RobertaConfig(
        vocab_size=len(tokenizer),
        hidden_size=128,
        num_hidden_layers=2,
        num_attention_heads=4,
        intermediate_size=512,
        max_position_embeddings=68,
        pad_token_id=tokenizer.pad_token_id,
        bos_token_id=tokenizer.bos_token_id,
        eos_token_id=tokenizer.eos_token_id,
    )
    model = RobertaForMaskedLM(config).to(device)
    model.train()
    optimizer = torch.optim.AdamW(model.parameters(), lr=lr)

    encoded = [tokenizer(s)["input_ids"] for s in sentences]
    pad_id = tokenizer.pad_token_id
    mask_id = tokenizer.mask_token_id

    def batches(order):
        for i in range(0, len(order), batch_size):
            chunk = [encoded[j] for j in order[i : i + batch_size]]
            width = max(len(c) for c in chunk)
            input_ids = torch.full((len(chunk), width), pad_id, dtype=torch.long)
            attention = torch.zeros((len(chunk), width), dtype=torch.long)
            labels = torch.full((len(chunk), width), -100, dtype=torch.long)
            for r, seq in enumerate(chunk):
                n = len(seq)
                input_ids[r, :n] = torch.tensor(seq)
                attention[r, :n] = 1
                # maskable = everything but <s> and </s>
                inner = np.arange(1, n - 1)
                m = max(1, int(round(mask_rate * inner.size)))
                picks = rng.choice(inner, size=m, replace=False)
                for p in picks:
                    labels[r, p] = input_ids[r, p]
                    input_ids[r, p] = mask_id
            yield input_ids, attention, labels

    accuracy = 0.0
    for epoch in range(max_epochs):
        order = rng.permutation(len(encoded))
        total, steps = 0.0, 0
        for input_ids, attention, labels in batches(order):
            optimizer.zero_grad()
            out = model(input_ids=input_ids, attention_mask=attention, labels=labels)
            out.loss.backward()
            optimizer.step()
            total += float(out.loss.detach())
            steps += 1
        model.eval()
        accuracy = _fact_accuracy(model, tokenizer, device)
        model.train()
        log(f"epoch {epoch + 1}: loss {total / steps:.4f}, fact accuracy {accuracy:.2f}")
        if epoch + 1 >= min_epochs and accuracy >= target_accuracy:
            break
    if accuracy < target_accuracy:
        log(f"warning: fact accuracy {accuracy:.2f} below target {target_accuracy}")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model.eval()
    model.save_pretrained(out_dir)
    tokenizer.save_pretrained(out_dir)
    return out_dir


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True, help="output model directory")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    train_model(args.out, seed=args.seed)
    return 0


if __name__ == "__main__":
    sys.exit(main())
