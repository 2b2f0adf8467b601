"""Scene descriptions: prompt, grammar, sentence embeddings and text feature encoders."""
from .description import (LEFT_TO_RIGHT, PROMPT, RIGHT_TO_LEFT, SceneDescription, format_description,
                          parse_description, render_prompt, split_sentences)
from .embedding import (embed_description, embed_sentence, fnv1a_64, load_sentence_features,
                        parse_sentence_features, save_sentence_features, tokenize)
from .encoding import (WEATHER_LABELS, ParagraphEncoder, RadarEnrichment, WeatherClassifier,
                       classify_weather, encode_paragraph, radar_enrich, weather_feature)
