"""Built-in synthetic template grammars.

These stand in for proprietary carrier-phrase datasets: a desk-scale demo
grammar, a wide benchmark grammar (>= 100 signatures for controllability
studies), and a low-resource grammar with one signature per intent for the
augmentation experiment. Vocabulary is deliberately small and carrier
patterns are shared across domains and intents so that signatures crowd
each other, which is the regime the generators are evaluated in.
"""

from __future__ import annotations

from .corpus import GrammarSpec, Signature, parse_template

SLOT_INVENTORY = frozenset(
    {
        "movie_title",
        "song_title",
        "album_title",
        "book_title",
        "show_title",
        "person_name",
        "artist_name",
        "author_name",
        "genre",
        "year",
        "award_title",
        "channel",
        "rating_value",
    }
)

# Per-domain surface vocabulary. `by` is the creator linking word and
# `consume` the domain verb ("watch a movie" / "hear a song").
_DOMAINS = {
    "movies": dict(
        item="movie_title", sing="movie", plural="movies",
        creator="person_name", by="starring", consume="watch",
        makers=("directed", "made"),
    ),
    "music": dict(
        item="song_title", sing="song", plural="songs",
        creator="artist_name", by="by", consume="hear",
        makers=("wrote",),
    ),
    "books": dict(
        item="book_title", sing="book", plural="books",
        creator="author_name", by="by", consume="read",
        makers=("wrote",),
    ),
    "tv": dict(
        item="show_title", sing="show", plural="shows",
        creator="person_name", by="starring", consume="watch",
        makers=("created", "made"),
    ),
}

# Intent families: name -> (slot spec, templates). Slot placeholders
# {item}/{creator} and word placeholders {sing}/{plural}/{by}/{consume}
# are filled per domain. `+year` in the slot spec appends the year slot.
_FAMILIES = {
    "play_item": (
        ["{item}"],
        [
            "play ( the | ) {item}",
            "put on ( the | ) {item}",
            "( please | ) play {item} ( now | for me )",
            "start ( playing | ) {item}",
        ],
    ),
    "play_genre": (
        ["genre"],
        [
            "play ( some | ) genre {plural}",
            "put on ( some | a few ) genre {plural}",
            "i want to {consume} ( some | ) genre {plural}",
            "( please | ) play genre {plural} for me",
        ],
    ),
    "find_genre": (
        ["genre"],
        [
            "show me ( some | all ) genre {plural}",
            "what genre {plural} ( do you have | are there )",
            "list ( the | ) genre {plural}",
            "find ( some | ) genre {plural}",
        ],
    ),
    "find_by_creator": (
        ["genre", "{creator}"],
        [
            "show me ( some | ) genre {plural} {by} {creator}",
            "give me genre {plural} {by} {creator}",
            "what genre {plural} ( do you have | are there ) {by} {creator}",
            "find ( me | ) genre {plural} {by} {creator}",
            "( please | ) show genre {plural} {by} {creator}",
        ],
    ),
    "creator_items": (
        ["{creator}"],
        [
            "show me ( all | ) {plural} {by} {creator}",
            "what {plural} do you have {by} {creator}",
            "find ( me | ) {plural} {by} {creator}",
            "( please | ) list {plural} {by} {creator}",
            "what are ( all | ) the {plural} {by} {creator}",
        ],
    ),
    "play_by_creator": (
        ["{creator}"],
        [
            "play ( a | the best ) {sing} {by} {creator}",
            "put on a {sing} {by} {creator}",
            "play me a {sing} {by} {creator}",
            "( please | ) start a {sing} {by} {creator}",
            "i want to {consume} a {sing} {by} {creator}",
        ],
    ),
    "item_rating": (
        ["{item}"],
        [
            "is {item} ( good | any good )",
            "what ( is | was ) the rating ( of | for ) {item}",
            "how ( good | popular ) is {item}",
        ],
    ),
    "release_date": (
        ["{item}"],
        [
            "when was {item} released",
            "when did {item} come out",
            "( do you know | ) when {item} came out",
            "how old is {item}",
            "is {item} ( new | old | recent )",
        ],
    ),
    "recommend_genre": (
        ["genre"],
        [
            "recommend ( a | a good ) genre {sing}",
            "( can you | ) suggest a genre {sing}",
            "suggest some genre {plural}",
            "( please | ) recommend some genre {plural}",
            "what genre {sing} should i {consume}",
        ],
    ),
    "item_info": (
        ["{item}"],
        [
            "tell me ( about | more about ) {item}",
            "what is {item} about",
            "give me ( some | ) ( info | details ) ( about | on ) {item}",
        ],
    ),
    "similar_items": (
        ["{item}"],
        [
            "show me {plural} ( like | similar to ) {item}",
            "find ( me | ) something like {item}",
            "what {plural} are similar to {item}",
            "( please | ) suggest {plural} like {item}",
            "more {plural} like {item}",
        ],
    ),
    "similar_by_genre": (
        ["genre", "{item}"],
        [
            "show me genre {plural} like {item}",
            "find genre {plural} similar to {item}",
            "what genre {plural} are ( like | similar to ) {item}",
            "( please | ) suggest genre {plural} like {item}",
            "give me ( more | some ) genre {plural} like {item}",
        ],
    ),
    "add_to_list": (
        ["{item}"],
        [
            "add {item} to my ( list | queue )",
            "put {item} ( on | in ) my ( list | queue )",
            "save {item} for later",
            "( please | ) save {item} to my list",
        ],
    ),
    "remove_from_list": (
        ["{item}"],
        [
            "remove {item} from my ( list | queue )",
            "take {item} ( off | out of ) my ( list | queue )",
            "( please | ) delete {item} from my list",
        ],
    ),
    "who_made": (
        ["{item}"],
        [
            "who {maker} {item}",
            "who is ( behind | responsible for ) {item}",
            "tell me who {maker} {item}",
            "who is the creator of {item}",
            "i want to know who {maker} {item}",
        ],
    ),
    "item_kind": (
        ["{item}"],
        [
            "what ( kind | type ) of {sing} is {item}",
            "( can you | ) tell me what type of {sing} {item} is",
            "what ( sort | style ) of {sing} is {item}",
            "( please | ) describe the type of {item}",
        ],
    ),
    "item_length": (
        ["{item}"],
        [
            "how long is {item}",
            "what is the length of {item}",
            "is {item} ( long | short )",
            "what is the running time of {item}",
            "how much time is {item}",
        ],
    ),
    "availability": (
        ["{item}"],
        [
            "is {item} available",
            "can i ( get | stream ) {item}",
            "do you have {item}",
            "where can i ( find | stream ) {item}",
            "( please | ) check if {item} is available",
        ],
    ),
    "creator_count": (
        ["{creator}"],
        [
            "how many {plural} ( does | did ) {creator} have",
            "how many {plural} {by} {creator} are there",
            "count ( the | all the ) {plural} {by} {creator}",
            "( do you know | ) how many {plural} {creator} has",
        ],
    ),
    "latest_by_creator": (
        ["{creator}"],
        [
            "what is the ( latest | newest ) {sing} {by} {creator}",
            "play the ( latest | newest ) {sing} {by} {creator}",
            "what is the most recent {sing} {by} {creator}",
            "( show me | give me ) the ( latest | newest ) {sing} {by} {creator}",
        ],
    ),
}

# Families that get an additional +year variant signature.
_YEAR_FAMILIES = ("play_genre", "find_by_creator", "creator_items", "find_genre", "similar_by_genre")

# Extra signatures that only exist for one domain.
_DOMAIN_EXTRAS = {
    "movies": [
        (
            "item_awards",
            ["award_title", "{item}"],
            [
                "did {item} win an award_title",
                "what award_title did {item} win",
                "was {item} nominated for an award_title",
                "( tell me | ) what award_title {item} ( won | was nominated for )",
                "has {item} won an award_title",
            ],
        ),
        (
            "creator_awards",
            ["award_title", "{creator}"],
            [
                "did {creator} win an award_title",
                "what award_title did {creator} win",
                "has {creator} ( ever | ) won an award_title",
                "was {creator} nominated for an award_title",
                "( tell me | ) what award_title {creator} won",
            ],
        ),
        (
            "rated_check",
            ["rating_value", "{item}"],
            [
                "is {item} rated rating_value",
                "was {item} rated rating_value",
                "( is | was ) {item} given a rating_value rating",
                "does {item} have a rating_value rating",
                "tell me if {item} is rated rating_value",
            ],
        ),
    ],
    "music": [
        (
            "play_album",
            ["album_title"],
            [
                "play ( the | ) album album_title",
                "put on the album album_title",
                "start the album album_title",
                "( please | ) play the album album_title",
                "i want to hear the album album_title",
            ],
        ),
        (
            "song_from_album",
            ["album_title", "song_title"],
            [
                "( play | put on ) song_title from ( the album | ) album_title",
                "i want to hear song_title from album_title",
                "start song_title from the album album_title",
            ],
        ),
    ],
    "tv": [
        (
            "show_channel",
            ["channel", "{item}"],
            [
                "is {item} on channel",
                "when is {item} on channel",
                "what time is {item} on channel",
                "( what time | when ) does {item} air on channel",
                "is {item} airing on channel ( tonight | today )",
            ],
        ),
        (
            "rated_check",
            ["rating_value", "{item}"],
            [
                "is {item} rated rating_value",
                "was {item} rated rating_value",
                "does {item} have a rating_value rating",
                "( is | was ) {item} given a rating_value rating",
            ],
        ),
    ],
    "books": [
        (
            "read_sample",
            ["{item}"],
            [
                "read me ( a sample | an excerpt ) ( of | from ) {item}",
                "( please | ) read a sample of {item}",
                "give me an excerpt from {item}",
            ],
        ),
    ],
}


def _fill(text, vocab):
    out = text
    for key in ("item", "creator", "sing", "plural", "by", "consume"):
        out = out.replace("{" + key + "}", vocab[key])
    return out


def _rule(domain, intent, slot_spec, template_texts, vocab, extra_year=False):
    slots = []
    for s in slot_spec:
        slots.append(_fill(s, vocab))
    if extra_year:
        slots.append("year")
        intent = intent + "_year"
    templates = []
    for text in template_texts:
        if "{maker}" in text:
            for maker in vocab["makers"]:
                filled = _fill(text.replace("{maker}", maker), vocab)
                templates.append(filled + " from year" if extra_year else filled)
        else:
            filled = _fill(text, vocab)
            templates.append(filled + " from year" if extra_year else filled)
    sig = Signature.make(domain, intent, slots)
    return (sig, tuple(parse_template(t) for t in templates))


def benchmark_grammar(per_signature=8):
    """Wide grammar: every family in every domain plus year variants and
    domain extras; at least 100 signatures."""
    rules = []
    for domain, vocab in _DOMAINS.items():
        for intent, (slot_spec, templates) in _FAMILIES.items():
            rules.append(_rule(domain, intent, slot_spec, templates, vocab))
        for intent in _YEAR_FAMILIES:
            slot_spec, templates = _FAMILIES[intent]
            rules.append(_rule(domain, intent, slot_spec, templates, vocab, extra_year=True))
        for intent, slot_spec, templates in _DOMAIN_EXTRAS.get(domain, []):
            rules.append(_rule(domain, intent, slot_spec, templates, vocab))
    return GrammarSpec(tuple(rules), SLOT_INVENTORY, per_signature=per_signature)


_DEMO_FAMILIES = (
    "play_item",
    "play_genre",
    "find_by_creator",
    "item_rating",
    "item_info",
    "similar_items",
    "release_date",
)


def demo_grammar(per_signature=8):
    """Small grammar over two domains, 14 signatures, ~8 phrases each."""
    rules = []
    for domain in ("movies", "music"):
        vocab = _DOMAINS[domain]
        for intent in _DEMO_FAMILIES:
            slot_spec, templates = _FAMILIES[intent]
            rules.append(_rule(domain, intent, slot_spec, templates, vocab))
    return GrammarSpec(tuple(rules), SLOT_INVENTORY, per_signature=per_signature)


def tiny_grammar(n_signatures=3, per_signature=None):
    """First n signatures of the demo grammar, for contrast experiments."""
    demo = demo_grammar(per_signature=None)
    rules = demo.rules[:n_signatures]
    return GrammarSpec(tuple(rules), SLOT_INVENTORY, per_signature=per_signature)


_LOWRES_FAMILIES = (
    "play_item",
    "item_rating",
    "item_info",
    "add_to_list",
    "remove_from_list",
    "similar_items",
    "availability",
)

_POLITE = (
    "play_item",
    "item_rating",
    "item_info",
    "similar_items",
    "availability",
    "add_to_list",
    "remove_from_list",
)


def lowres_grammar(per_signature=12):
    """One signature per intent, wide expansion sets, for the low-resource
    augmentation experiment."""
    rules = []
    for domain, vocab in _DOMAINS.items():
        for intent in _LOWRES_FAMILIES:
            slot_spec, templates = _FAMILIES[intent]
            if intent in _POLITE:
                templates = ["( please | ) " + t if not t.startswith("(") else t
                             for t in templates]
            rules.append(_rule(domain, intent, slot_spec, templates, vocab))
    return GrammarSpec(tuple(rules), SLOT_INVENTORY, per_signature=per_signature)


BUILTIN_GRAMMARS = {
    "demo": demo_grammar,
    "benchmark": benchmark_grammar,
    "lowres": lowres_grammar,
}
