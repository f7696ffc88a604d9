/**
 * Flow control between the bridge and the paint loop.
 *
 * Snapshots can arrive in bursts (several per paint under load) or with
 * gaps. The pacer keeps only the newest pending snapshot — older ones
 * in a burst are superseded before they are ever drawn — and the paint
 * loop takes at display rate, so the canvas always shows the freshest
 * pose without a backlog building up.
 */

import type { SnapshotMessage } from "./messages.js";

export class FramePacer {
  private pending: SnapshotMessage | null = null;
  private newestTUs = -Infinity;

  /** Offer an arriving snapshot; stale (older t_us) ones are dropped. */
  offer(snapshot: SnapshotMessage): void {
    if (snapshot.t_us >= this.newestTUs) {
      this.pending = snapshot;
      this.newestTUs = snapshot.t_us;
    }
  }

  /** The newest snapshot since the last take, or null when unchanged. */
  take(): SnapshotMessage | null {
    const snapshot = this.pending;
    this.pending = null;
    return snapshot;
  }

  get hasPending(): boolean {
    return this.pending !== null;
  }

  reset(): void {
    this.pending = null;
    this.newestTUs = -Infinity;
  }
}

/**
 * Doubling delay for reconnect attempts: base, 2x, 4x, ... capped at
 * `maxMs`; `reset()` after a successful connection starts over.
 */
export class ReconnectBackoff {
  private attempt = 0;

  constructor(
    private readonly baseMs = 500,
    private readonly maxMs = 8000,
  ) {}

  nextDelayMs(): number {
    const delay = Math.min(this.baseMs * 2 ** this.attempt, this.maxMs);
    this.attempt += 1;
    return delay;
  }

  reset(): void {
    this.attempt = 0;
  }
}
