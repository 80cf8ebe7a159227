/** Fixed-interval polling with cancellation.
 *
 * The service runs pipeline jobs in the background and exposes state via
 * GET; the UI refreshes by polling every POLL_INTERVAL_MS rather than
 * holding a push channel open.
 */

export const POLL_INTERVAL_MS = 2000;

export interface PollHandle<T> {
  /** Resolves with the first value for which `until` returns true;
   * rejects with the fetcher's error, or with PollCancelled on cancel. */
  done: Promise<T>;
  cancel: () => void;
}

export class PollCancelled extends Error {
  constructor() {
    super("poll cancelled");
    this.name = "PollCancelled";
  }
}

export function poll<T>(
  fetcher: () => Promise<T>,
  until: (value: T) => boolean,
  options: {
    intervalMs?: number;
    /** Called with every fetched value, terminal or not (drives re-render). */
    onUpdate?: (value: T) => void;
  } = {},
): PollHandle<T> {
  const intervalMs = options.intervalMs ?? POLL_INTERVAL_MS;
  let cancelled = false;
  let timer: ReturnType<typeof setTimeout> | undefined;
  let settle: (err: PollCancelled) => void = () => {};

  const done = new Promise<T>((resolve, reject) => {
    settle = reject;
    const tick = async (): Promise<void> => {
      let value: T;
      try {
        value = await fetcher();
      } catch (err) {
        if (!cancelled) reject(err);
        return;
      }
      if (cancelled) return;
      options.onUpdate?.(value);
      if (until(value)) {
        resolve(value);
        return;
      }
      timer = setTimeout(tick, intervalMs);
    };
    void tick();
  });

  return {
    done,
    cancel: () => {
      if (cancelled) return;
      cancelled = true;
      if (timer !== undefined) clearTimeout(timer);
      settle(new PollCancelled());
    },
  };
}
