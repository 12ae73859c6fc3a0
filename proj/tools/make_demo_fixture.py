#!/usr/bin/env python3
"""Writes the demo fixture bundle (channel.json, videos.json, comments.json).

Three videos and 1,500 comments with authored scenarios:
  * vid-election gets a volume spike and a positive sentiment swing in the
    week of 2024-01-29 (the collection week);
  * vid-housing carries six follow-up requests;
  * three prolific authors: two above the 200-comment superfan bar, one at 199;
  * vid-river has 20 replies.

Output is deterministic. Usage: make_demo_fixture.py [out_dir]
"""

import json
import random
import sys
from datetime import datetime, timedelta, timezone
from pathlib import Path

FETCHED = datetime(2024, 1, 31, 23, 0, tzinfo=timezone.utc)
SPIKE_WEEK = datetime(2024, 1, 29, tzinfo=timezone.utc)

TOPICS = {
    "rent": ["rent", "landlord", "tenants", "lease", "eviction", "apartment"],
    "mortgage": ["mortgage", "interest", "rates", "bank", "loan", "homeowners"],
    "drought": ["drought", "river", "water", "reservoir", "rainfall", "dry"],
    "farming": ["farmers", "crops", "irrigation", "harvest", "cattle", "fields"],
    "ballots": ["ballots", "counting", "polling", "station", "volunteers", "recount"],
    "candidates": ["candidates", "debate", "campaign", "senator", "promises", "speech"],
}

VIDEOS = [
    ("vid-housing", "Inside the housing crisis", datetime(2023, 6, 5, 14, tzinfo=timezone.utc), 184_000, ["rent", "mortgage"]),
    ("vid-river", "The river that ran dry", datetime(2023, 9, 11, 14, tzinfo=timezone.utc), 96_500, ["drought", "farming"]),
    ("vid-election", "Counting every vote", datetime(2023, 11, 20, 14, tzinfo=timezone.utc), 61_200, ["ballots", "candidates"]),
]

POSITIVE = ["great", "excellent", "insightful", "brilliant", "informative", "thoughtful", "wonderful", "fascinating"]
NEGATIVE = ["biased", "misleading", "boring", "terrible", "sloppy", "disappointing", "useless", "rushed"]

FRAMES = [
    "the {a} and {b} part about {c} was {s}",
    "{s} look at {a}, {b} and {c}",
    "honestly {s} reporting on {a} with {b} and {c}",
    "{a} {b} {c} coverage felt {s} to me",
    "my {a} story matches this, {b} and {c} were {s}",
    "so {s} how you covered {a} {b} and the {c}",
]

UPDATE_REQUESTS = [
    "Please do a follow up on the tenants from the first building",
    "Could you make an update on what happened to the eviction case?",
    "We need a part 2 on the mortgage families, please",
    "Any chance of an update on the landlord story next year?",
    "Hoping for a follow up with the homeowners you interviewed",
    "Will there be an update about the apartment block after the ruling?",
]


def iso(t):
    return t.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def main():
    out = Path(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).resolve().parent.parent / "demo")
    out.mkdir(parents=True, exist_ok=True)
    rng = random.Random(20240131)

    def text(topic_names, positive_share):
        words = TOPICS[rng.choice(topic_names)]
        a, b, c = rng.sample(words, 3)
        s = rng.choice(POSITIVE if rng.random() < positive_share else NEGATIVE)
        t = rng.choice(FRAMES).format(a=a, b=b, c=c, s=s)
        return t[0].upper() + t[1:]

    def between(lo, hi):
        return lo + timedelta(seconds=rng.randrange(int((hi - lo).total_seconds())))

    videos = []
    for vid, title, published, views, _ in VIDEOS:
        videos.append({
            "video_id": vid, "title": title, "published_at": iso(published), "view_count": views,
            "like_count": views // 25, "comment_count_reported": 0, "fetched_at": iso(FETCHED),
        })

    casual = [f"viewer-{i:03d}" for i in range(1, 420)]
    fans = [("fan-ana", "Ana R.", 230, 0.9), ("fan-ben", "Ben Okafor", 210, 0.55), ("fan-cho", "Cho Min", 199, 0.8)]
    comments = []
    counter = 0

    def add(video, txt, at, author, display, parent=None):
        nonlocal counter
        counter += 1
        comments.append({
            "comment_id": f"c{counter:05d}", "video_id": video, "parent_id": parent, "author_id": author,
            "author_display": display, "text": txt, "published_at": iso(at), "like_count": rng.randrange(0, 40),
        })
        return comments[-1]

    # Per-video volumes and time windows (the river video's 500 include 20 replies).
    plan = {"vid-housing": 700, "vid-river": 480, "vid-election": 300}
    spike_start = SPIKE_WEEK
    quiet_end = datetime(2024, 1, 15, tzinfo=timezone.utc)
    fan_slots = []
    for author, display, n, pos in fans:
        fan_slots += [(author, display, pos)] * n
    rng.shuffle(fan_slots)

    for vid, _, published, _, topic_names in VIDEOS:
        n = plan[vid]
        if vid == "vid-housing":
            n -= len(UPDATE_REQUESTS)
        for i in range(n):
            if vid == "vid-election" and i >= 150:
                at = between(spike_start, FETCHED - timedelta(hours=1))
                positive_share = 0.95
            elif vid == "vid-election":
                at = between(published + timedelta(hours=1), spike_start - timedelta(hours=1))
                positive_share = 0.25
            else:
                at = between(published + timedelta(hours=1), quiet_end)
                positive_share = 0.6
            if fan_slots and rng.random() < 0.45:
                author, display, fan_pos = fan_slots.pop()
                positive_share = fan_pos
            else:
                author = rng.choice(casual)
                display = author.replace("viewer-", "Viewer ")
            add(vid, text(topic_names, positive_share), at, author, display)

    housing_published = VIDEOS[0][2]
    for req in UPDATE_REQUESTS:
        add("vid-housing", req, between(housing_published + timedelta(days=30), quiet_end), rng.choice(casual), "Reader")

    # Whatever fan comments are left go to the housing video so counts stay exact.
    while fan_slots:
        author, display, fan_pos = fan_slots.pop()
        victim = next(c for c in comments if c["video_id"] == "vid-housing" and c["author_id"].startswith("viewer-"))
        victim["author_id"], victim["author_display"] = author, display

    river = [c for c in comments if c["video_id"] == "vid-river"]
    for parent in rng.sample(river, 20):
        at = datetime.strptime(parent["published_at"], "%Y-%m-%dT%H:%M:%SZ").replace(tzinfo=timezone.utc)
        reply_at = min(at + timedelta(hours=rng.randrange(1, 72)), quiet_end)
        add("vid-river", text(["drought", "farming"], 0.6), reply_at, rng.choice(casual), "Replier", parent["comment_id"])

    for v in videos:
        v["comment_count_reported"] = sum(1 for c in comments if c["video_id"] == v["video_id"])
    channel = {"channel_id": "UCdemo-newsroom", "display_name": "Demo Newsroom", "last_fetch_at": iso(FETCHED)}

    (out / "channel.json").write_text(json.dumps(channel, indent=2) + "\n")
    (out / "videos.json").write_text(json.dumps(videos, indent=2) + "\n")
    (out / "comments.json").write_text(json.dumps(comments, indent=1) + "\n")
    print(f"wrote {len(videos)} videos, {len(comments)} comments to {out}")


if __name__ == "__main__":
    main()
