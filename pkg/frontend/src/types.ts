export type ItemStatus = 'pending' | 'accepted' | 'rejected';

export interface QueueSummary {
  id: string;
  label: string;
  status: ItemStatus;
  enqueued_ts: number;
  thumbnail: string | null;
}

export interface QaRow {
  prompt_id: number;
  question: string;
  answer: string;
}

export interface AssetRef {
  path: string;
  asset: string | null;
}

export interface Decision {
  verdict: 'accept' | 'reject';
  note: string;
  ts: number;
}

export interface ItemDetail extends QueueSummary {
  source_image: AssetRef;
  transcript: QaRow[];
  synthetics: AssetRef[];
  decision: Decision | null;
}

export interface AugmentedRecord {
  id: string;
  path: string;
  label: string;
  split: string;
  hardness: number | null;
  provenance: string | null;
}
