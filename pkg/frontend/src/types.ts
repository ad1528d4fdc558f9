export interface DialogLine {
  speaker: 'user' | 'agent';
  text: string;
}

export interface ClaimedTask {
  worker_session_id: string;
  game_id: string;
  dialog: DialogLine[];
  prompt: string;
  explanation: string;
  remaining_s: number;
  playlist_position: number;
  playlist_size: number;
  tutorial: boolean;
  points: number;
}

export interface ClaimDone {
  done: true;
  worker_session_id: string;
  total_points: number;
}

export interface ClaimResponse {
  available: boolean;
  task: ClaimedTask | ClaimDone | null;
}

export interface AnswerResponse {
  accepted: boolean;
  matched: boolean;
  points_awarded: number;
  game_state: string;
  reason: string | null;
}

// One line of the gateway's NDJSON event stream.
export interface StreamEvent {
  cursor: number;
  at: string;
  kind: string;
  game_id: string | null;
  worker_id: string | null;
  payload: Record<string, unknown>;
}

export type GameStatus = 'idle' | 'playing' | 'matched' | 'timed_out' | 'waiting_next' | 'done';

export interface GameView {
  gameId: string | null;
  dialog: DialogLine[];
  prompt: string;
  explanation: string;
  remainingS: number;
  myAnswers: string[];
  status: GameStatus;
  points: number;
  playlistPosition: number;
  playlistSize: number;
  tutorial: boolean;
  notice: string | null;
}

export function isClaimDone(task: ClaimedTask | ClaimDone): task is ClaimDone {
  return (task as ClaimDone).done === true;
}
