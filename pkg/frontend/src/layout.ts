/** Topological layering for the plan graph: nodes flow left to right, a
 * node's column is the longest path from any root. */

import type { TaskSnapshot } from "./types.js";

export interface NodePosition {
  stepId: number;
  column: number;
  row: number;
}

export function layerPlan(task: TaskSnapshot): NodePosition[] {
  const ids = task.steps.map((s) => s.step_id);
  const parents = new Map<number, number[]>(ids.map((id) => [id, []]));
  for (const [from, to] of task.edges) {
    parents.get(to)?.push(from);
  }
  const column = new Map<number, number>();
  const resolve = (id: number, seen: Set<number>): number => {
    const cached = column.get(id);
    if (cached !== undefined) return cached;
    if (seen.has(id)) return 0; // defensive: plans are validated acyclic upstream
    seen.add(id);
    const ps = parents.get(id) ?? [];
    const depth = ps.length ? Math.max(...ps.map((p) => resolve(p, seen))) + 1 : 0;
    column.set(id, depth);
    return depth;
  };
  for (const id of ids) resolve(id, new Set());
  const rows = new Map<number, number>();
  return ids.map((id) => {
    const col = column.get(id) ?? 0;
    const row = rows.get(col) ?? 0;
    rows.set(col, row + 1);
    return { stepId: id, column: col, row };
  });
}

export function columnsOf(positions: NodePosition[]): number {
  return positions.length ? Math.max(...positions.map((p) => p.column)) + 1 : 0;
}
