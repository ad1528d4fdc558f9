import type { StreamEvent } from './types.js';

export type LineHandler = (line: string) => void;
export type CloseHandler = () => void;

/**
 * Transport abstraction over the gateway's NDJSON event stream, so tests can
 * inject scripted (and deliberately duplicated) deliveries.
 */
export interface StreamTransport {
  /** Open a stream from a cursor; returns an abort function. */
  open(target: string, cursor: number, onLine: LineHandler, onClose: CloseHandler): () => void;
}

export class FetchStreamTransport implements StreamTransport {
  constructor(private readonly baseUrl: string) {}

  open(target: string, cursor: number, onLine: LineHandler, onClose: CloseHandler): () => void {
    const controller = new AbortController();
    const url = `${this.baseUrl}/v1/games/${encodeURIComponent(target)}/events?cursor=${cursor}&follow_s=60`;
    (async () => {
      try {
        const response = await fetch(url, { signal: controller.signal });
        if (!response.body) {
          onClose();
          return;
        }
        const reader = response.body.getReader();
        const decoder = new TextDecoder();
        let buffer = '';
        for (;;) {
          const { done, value } = await reader.read();
          if (done) {
            break;
          }
          buffer += decoder.decode(value, { stream: true });
          let newline = buffer.indexOf('\n');
          while (newline >= 0) {
            const line = buffer.slice(0, newline).trim();
            buffer = buffer.slice(newline + 1);
            if (line) {
              onLine(line);
            }
            newline = buffer.indexOf('\n');
          }
        }
      } catch {
        // Dropped connection: the client reconnects from its cursor.
      } finally {
        onClose();
      }
    })();
    return () => controller.abort();
  }
}

/**
 * Resumable event-stream consumer. Delivery from the gateway is
 * at-least-once; duplicates are dropped here by cursor, so downstream
 * consumers (match feedback, playlist alerts) see each event exactly once
 * even across reconnects.
 */
export class EventStreamClient {
  private lastCursor = 0;
  private abort: (() => void) | null = null;
  private closed = false;

  constructor(
    private readonly transport: StreamTransport,
    private readonly target: string,
    private readonly onEvent: (event: StreamEvent) => void,
  ) {}

  connect(): void {
    this.closed = false;
    this.openFromCursor();
  }

  private openFromCursor(): void {
    this.abort = this.transport.open(
      this.target,
      this.lastCursor,
      (line) => this.handleLine(line),
      () => {
        this.abort = null;
      },
    );
  }

  private handleLine(line: string): void {
    let event: StreamEvent;
    try {
      event = JSON.parse(line) as StreamEvent;
    } catch {
      return; // tolerate partial lines from a dropped connection
    }
    if (this.closed || typeof event.cursor !== 'number' || event.cursor <= this.lastCursor) {
      return; // duplicate or stale delivery after a resume
    }
    this.lastCursor = event.cursor;
    this.onEvent(event);
  }

  /** Simulate or react to a dropped connection: reopen from the cursor. */
  reconnect(): void {
    if (this.abort) {
      this.abort();
      this.abort = null;
    }
    if (!this.closed) {
      this.openFromCursor();
    }
  }

  close(): void {
    this.closed = true;
    if (this.abort) {
      this.abort();
      this.abort = null;
    }
  }

  get cursor(): number {
    return this.lastCursor;
  }
}
