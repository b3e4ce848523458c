#!/usr/bin/env python3
"""Regenerate the deterministic fixture corpus under fixtures/corpus-v1.

Every byte is a pure function of the seeds below, so the corpus can be
rebuilt and committed whenever its shape changes. The corpus exercises
the awkward paths on purpose: duplicate bytes behind different URLs,
shared images across articles, missing files, undersized images, a
schema-violating extraction response, and excluded real-pool records.
"""

from __future__ import annotations

import io
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

ROOT = Path(__file__).resolve().parents[1]
CORPUS = ROOT / "fixtures" / "corpus-v1"

QUARTER_DATES = [
    "2025-01-10", "2025-01-25", "2025-02-14", "2025-03-05", "2025-03-20", "2025-03-31",
    "2025-04-01", "2025-04-18", "2025-05-09", "2025-05-27", "2025-06-11", "2025-06-30",
    "2025-07-08", "2025-07-22", "2025-08-15", "2025-08-29", "2025-09-12", "2025-09-30",
    "2025-10-05", "2025-10-21", "2025-11-06", "2025-11-19", "2025-12-03", "2025-12-28",
]

RELEVANT = {1, 2, 3, 4, 5, 6, 7, 8, 10, 12, 14, 16, 18, 20, 21, 23}
QUARANTINED = {13}

CAPTION_BANK = [
    "A photorealistic portrait of a world leader wearing a designer puffer jacket",
    "An aerial view of a flooded city square with stranded buses",
    "A crowd of protesters holding signs in front of a burning parliament building",
    "A shark swimming down a highway submerged by hurricane floodwater",
    "An astronaut planting a corporate flag on the lunar surface",
    "A giant cruise ship wedged between two skyscrapers",
    "A politician shaking hands with a person who was never at the event",
    "Soldiers parachuting into a packed football stadium at night",
    "A collapsed bridge with a train hanging over the edge",
    "An erupting volcano photographed from a passenger jet window",
    "A polar bear walking through a tropical beach resort",
    "A celebrity being arrested on the steps of a courthouse",
    "A wall of fire approaching a famous seaside boardwalk",
    "An enormous octopus wrapped around a lighthouse during a storm",
    "A snow-covered desert with camels pulling sleds",
    "Two presidents embracing at a summit that never took place",
]

OUTLETS_NEWS = ["daily-lens", "metro-wire", "global-post", "civic-times"]
OUTLETS_SOCIAL = ["newsgram", "chirper"]


def make_png(seed: int, width: int, height: int) -> bytes:
    rng = np.random.RandomState(seed)
    base = rng.randint(0, 256, size=(height, width, 3), dtype=np.uint8)
    yy = np.linspace(0, 80, height, dtype=np.uint8)[:, None, None]
    arr = np.clip(base.astype(np.int16) - yy + 40, 0, 255).astype(np.uint8)
    img = Image.fromarray(arr, "RGB")
    buf = io.BytesIO()
    img.save(buf, format="PNG", optimize=False)
    return buf.getvalue()


def write(path: Path, data: bytes):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)


def main() -> int:
    images = CORPUS / "images"

    # candidate images
    for i in range(160):
        width = 40 + (i % 5) * 8
        height = 36 + (i * 3 % 7) * 6
        write(images / f"cand_{i:03d}.png", make_png(1000 + i, width, height))
    write(images / "cand_010_copy.png", (images / "cand_010.png").read_bytes())
    write(images / "cand_900_small.png", make_png(1900, 24, 24))

    # real pool images
    for i in range(230):
        width = 44 + (i % 6) * 6
        height = 40 + (i * 5 % 5) * 8
        write(images / f"real_{i:03d}.png", make_png(2000 + i, width, height))
    write(images / "real_077_copy.png", (images / "real_077.png").read_bytes())
    write(images / "real_901_small.png", make_png(2901, 20, 20))

    # generator images
    gen_rows = [
        ("nebula-diffusion-xl", "2025-02", 20, {"train": 18, "test": 2}),
        ("quasar-paint-2", "2025-05", 22, {}),
        ("aurora-gen-3", "2025-08", 18, {}),
        ("comet-imager-4", "2025-11", 20, {}),
    ]
    registry_rows = []
    for g, (name, released, size, split) in enumerate(gen_rows):
        files = []
        for i in range(size):
            rel = f"gen_{name.split('-')[0]}_{i:02d}.png"
            write(images / rel, make_png(3000 + 100 * g + i, 52 + (i % 4) * 6, 48 + (i % 3) * 8))
            files.append(f"../images/{rel}")
        registry_rows.append(
            {"name": name, "release_date": released, "size": size, **split,
             "image_files": files}
        )
    write(
        CORPUS / "registry" / "generators.json",
        (json.dumps({"generators": registry_rows}, indent=1, sort_keys=True) + "\n").encode(),
    )

    # articles: deal candidate urls deterministically, then add the traps
    url_cursor = 0

    def next_urls(n: int) -> list[str]:
        nonlocal url_cursor
        out = [f"fixture:images/cand_{(url_cursor + j) % 160:03d}.png" for j in range(n)]
        url_cursor += n
        return out

    articles = []
    responses = {}
    for i in range(1, 25):
        article_id = f"art-{i:03d}"
        relevant = i in RELEVANT
        urls = next_urls(8 if relevant else 4)
        if i == 3 or i == 4:
            urls[0] = "fixture:images/cand_015.png"  # shared across two articles
        if i == 5:
            urls[1] = "fixture:images/cand_010.png"
            urls[2] = "fixture:images/cand_010_copy.png"  # byte-duplicate pair
        if i == 8:
            urls[3] = "fixture:images/missing_001.png"  # dead link
        if i == 10:
            urls[2] = "fixture:images/cand_900_small.png"  # under the size floor
        rng = np.random.RandomState(7000 + i)
        caption_count = 1 + int(rng.randint(0, 3))
        captions = [
            CAPTION_BANK[int(k) % len(CAPTION_BANK)]
            for k in rng.choice(len(CAPTION_BANK), size=caption_count, replace=False)
        ]
        body = (
            f"Fact-check {i:03d}: a viral post claims the scene below is a real "
            f"photograph. Our review traced the picture to a text-to-image tool. "
            f"The visual tells: {captions[0].lower()}."
            if relevant
            else f"Fact-check {i:03d}: a quote attributed to an official was never "
            f"said. The claim circulated as plain text screenshots; no imagery "
            f"was involved."
        )
        articles.append(
            {
                "article_id": article_id,
                "source_url": (
                    "https://factcheck.example.org/art-023"
                    if i == 24  # duplicate source_url, dropped at fetch
                    else f"https://factcheck.example.org/{article_id}"
                ),
                "source_name": "example-factcheck",
                "published_at": QUARTER_DATES[i - 1],
                "body_text": body,
                "image_urls": urls,
            }
        )
        if i in QUARANTINED:
            responses[article_id] = {"relevant": True, "captions": [], "image_urls": []}
        elif relevant:
            extra = []
            if i == 2:
                # one new url found in the article text, one already known
                extra = [f"fixture:images/cand_{(90 + i) % 160:03d}.png", urls[0]]
            responses[article_id] = {
                "relevant": True,
                "captions": captions,
                "image_urls": extra,
            }
        else:
            responses[article_id] = {"relevant": False, "captions": [], "image_urls": []}

    write(
        CORPUS / "articles" / "articles.jsonl",
        ("\n".join(json.dumps(a, sort_keys=True) for a in articles) + "\n").encode(),
    )
    write(
        CORPUS / "extraction" / "responses.json",
        (json.dumps(responses, indent=1, sort_keys=True) + "\n").encode(),
    )

    # real pool records
    pool = []
    rng = np.random.RandomState(4242)
    for i in range(230):
        social = i >= 160
        day = 1 + int(rng.randint(0, 28))
        month = 1 + int(rng.randint(0, 12))
        pool.append(
            {
                "url": f"fixture:images/real_{i:03d}.png",
                "outlet": (OUTLETS_SOCIAL if social else OUTLETS_NEWS)[
                    i % (2 if social else 4)
                ],
                "published_at": f"2025-{month:02d}-{day:02d}",
                "source": "social" if social else "news",
            }
        )
    pool.append(
        {
            "url": "fixture:images/real_077_copy.png",  # byte-dup of real_077
            "outlet": "metro-wire",
            "published_at": "2025-06-15",
            "source": "news",
        }
    )
    pool.append(
        {
            "url": "fixture:images/real_901_small.png",  # under the size floor
            "outlet": "daily-lens",
            "published_at": "2025-06-16",
            "source": "news",
        }
    )
    pool.append(
        {
            "url": "fixture:images/missing_real.png",  # dead link
            "outlet": "daily-lens",
            "published_at": "2025-06-17",
            "source": "news",
        }
    )
    pool.append(
        {
            "url": "fixture:images/real_000.png",
            "outlet": "chirper",
            "published_at": "2025-06-18",
            "source": "social",
            "ai_related": True,  # excluded at the query level
        }
    )
    pool.append(
        {
            "url": "fixture:images/real_001.png",
            "outlet": "newsgram",
            "published_at": "2025-06-19",
            "source": "social",
            "ai_related": True,
        }
    )
    write(
        CORPUS / "realpool" / "records.jsonl",
        ("\n".join(json.dumps(r, sort_keys=True) for r in pool) + "\n").encode(),
    )

    write(CORPUS / "VERSION", b"wildharvest fixture corpus, format v1\n")

    n_images = len(list(images.glob("*.png")))
    print(f"fixture corpus at {CORPUS}: {len(articles)} articles, {n_images} images")
    return 0


if __name__ == "__main__":
    sys.exit(main())
