import { NEED_MORE_INFO, type Score } from './api';

/**
 * The scoring rubric shown to raters. The wording is fixed by the study
 * protocol and must be displayed as-is — do not edit copy here without a
 * protocol change.
 */
export interface RubricEntry {
  score: 1 | 2 | 3 | 4 | 5;
  label: string;
  details: string[];
}

export const RUBRIC: RubricEntry[] = [
  {
    score: 1,
    label: 'Completely inaccurate',
    details: [
      'may describe something that can occur in the specimen/tissue type pictured, but fundamentally incorrect, or may be the wrong tissue type or concept altogether.',
    ],
  },
  {
    score: 2,
    label: 'Partially accurate (i.e. related but wrong)',
    details: [
      'The text might describe an entity that is related to images, and occurring in that specimen type, but images are definitively a different diagnostic entity.',
      'May accurately describe something that is seen on the images, but additional, essential info is missing or incorrect.',
    ],
  },
  {
    score: 3,
    label: 'Mostly accurate but with clinically significant error/omission',
    details: [
      'The text is a very good match/description for the images, but something is incorrect or missing that may have clinical or diagnostic implications.',
    ],
  },
  {
    score: 4,
    label: 'Mostly accurate with clinically insignificant error/omission',
    details: [
      'The text is a very good match/description for the images, but there may be a minor, clinically insignificant aspect that is incorrect or missing',
    ],
  },
  {
    score: 5,
    label: 'Highly accurate',
    details: [
      "For example, the diagnosis is accurate and acceptable, but doesn't capture all of the details",
      'The text is a great description of the images, with no obvious information missing or incorrect.',
      'Note that even a very short summary or a description of "no pathologic findings" can still belong in this score.',
    ],
  },
];

export const NEED_MORE_INFO_ENTRY = {
  score: NEED_MORE_INFO,
  label: 'Need more info',
  details: [
    'This selection can be used if there is simply too little information in the text (or the images) to provide any reasonable quality assessment - please provide a very brief comment regarding the issue and/or what additional info you would need.',
  ],
} as const;

export function rubricTitle(score: Score): string {
  if (score === NEED_MORE_INFO) {
    return `${NEED_MORE_INFO_ENTRY.label} — ${NEED_MORE_INFO_ENTRY.details[0]}`;
  }
  const entry = RUBRIC.find((r) => r.score === score);
  return entry ? `${entry.score} — ${entry.label}\n${entry.details.join('\n')}` : String(score);
}
