/** Advisory client-side checks mirroring the service's rubric rules.
 *
 * The service is the validator of record; these run locally so a broken
 * edit is flagged before submission, not after a round trip. They must
 * stay in lockstep with the server rules: 3-5 criteria per scored stage,
 * integer points in [1, 100] summing to exactly 100.
 */

export const MIN_CRITERIA = 3;
export const MAX_CRITERIA = 5;
export const POINTS_TOTAL = 100;

export interface StageBadge {
  count: number;
  sum: number;
  /** count within [MIN_CRITERIA, MAX_CRITERIA] */
  countOk: boolean;
  /** every points value an integer in [1, 100] */
  pointsOk: boolean;
  /** sum === POINTS_TOTAL */
  sumOk: boolean;
  /** all of the above */
  ok: boolean;
}

/** Summarize one stage's criteria for the live badge.
 *
 * Rejected criteria are excluded: the service regenerates the rubric when
 * any criterion is rejected, so they no longer count toward the budget.
 */
export function stageBadge(
  criteria: readonly { points: number; status?: string }[],
): StageBadge {
  const active = criteria.filter((c) => c.status !== "rejected");
  const count = active.length;
  const sum = active.reduce((total, c) => total + c.points, 0);
  const countOk = count >= MIN_CRITERIA && count <= MAX_CRITERIA;
  const pointsOk = active.every(
    (c) => Number.isInteger(c.points) && c.points >= 1 && c.points <= 100,
  );
  const sumOk = sum === POINTS_TOTAL;
  return { count, sum, countOk, pointsOk, sumOk, ok: countOk && pointsOk && sumOk };
}

/** Recompute a stage badge as if one criterion's points were changed.
 *
 * Drives the live indicator while the reviewer is typing into a points
 * field, before any request is sent.
 */
export function badgeWithEdit(
  criteria: readonly { id: string; points: number; status?: string }[],
  criterionId: string,
  newPoints: number,
): StageBadge {
  const edited = criteria.map((c) =>
    c.id === criterionId ? { ...c, points: newPoints } : c,
  );
  return stageBadge(edited);
}

/** Parse a points input field: integers only, no signs or decimals. */
export function parsePoints(raw: string): number | null {
  const trimmed = raw.trim();
  if (!/^\d+$/.test(trimmed)) return null;
  return Number(trimmed);
}
