"""Surrogate platformer physics and the deterministic A* playability agent.

The simulator is a discrete cell world on the 16x56 grid, one action per
tick, everything integer.  It is intentionally a surrogate: no sub-cell
positions, no fire flower, no timers.  Conventions not forced by the tile
classes are frozen here and documented on the functions that implement them
(agent occupies one cell at either power level, enemies start walking left,
shells ignore gravity and do not hurt the agent, winged enemies die like
goombas, bumped question tiles stay solid).

Determinism is the point: step() is a pure function of (state, action), and
astar_play() resolves all ties by a fixed rule, so repeated runs produce
bit-identical traces.

Vertical motion follows the fixed jump profile +2,+1,+1,0 then gravity
-1,-2 (capped).  Holding a jump action extends the rise; releasing cuts it
short, which is what makes the high-jump event (rise >= 3) informative
rather than automatic.

Two code paths share the physics.  step() works on an explicit SimState and
accepts any enemy placement; astar_play() exploits the fact that enemy
motion never depends on the agent, rolling enemy trajectories forward once
per tick and keying states on a canonical tick once the configuration
starts cycling.  Both move enemies with _enemy_step and mushrooms with
_mushroom_step; a test replays searched paths through step() to hold the
two engines together.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from functools import lru_cache

from .tiles import CANONICAL_ALPHABET, COLS, ROWS, TileAlphabet, TileGrid

TICK_BUDGET = COLS * 20  # per-episode tick cap inside the search
NODE_BUDGET = 200_000
GOAL_COL = COLS - 1

ACTIONS = ("left", "right", "none", "jump-left", "jump-right", "jump-none")

EVENT_ORDER = (
    "jump",
    "high-jump",
    "long-jump",
    "stomp-kill",
    "shell-kill",
    "enemy-fall-death",
    "mushroom",
    "coin",
)

HIGH_JUMP_RISE = 3   # cells
LONG_JUMP_SPAN = 4   # cells

# air phases: pending vertical motion for the next step
_GROUND, _RISE2, _RISE3, _APEX, _FALL1, _FALL2 = range(6)
_PHASE_VV = (0, 1, 1, 0, -1, -2)

# internal action codes; a % 3 gives the horizontal part, a >= 3 holds jump
_A_LEFT, _A_RIGHT, _A_NONE, _A_JLEFT, _A_JRIGHT, _A_JNONE = range(6)
_ACTION_CODE = {name: i for i, name in
                enumerate(("left", "right", "none", "jump-left", "jump-right", "jump-none"))}
_ACTION_NAME = tuple(sorted(_ACTION_CODE, key=_ACTION_CODE.get))
_DH = (-1, 1, 0)

# expansion order: plain moves before jumps, rightward first, so that ties
# resolve toward "run right without mechanics"
_ORDER_GROUND = (_A_RIGHT, _A_NONE, _A_LEFT, _A_JRIGHT, _A_JNONE, _A_JLEFT)
_ORDER_AIR = (_A_RIGHT, _A_NONE, _A_LEFT)

_KIND_GOOMBA, _KIND_KOOPA, _KIND_WINGED = range(3)
_KIND_NAME = ("goomba", "koopa", "winged")

# event bits emitted by the engines; jump/high-jump/long-jump/coin are
# derived from per-step bookkeeping instead
_EV_STOMP = 1 << 3
_EV_SHELL = 1 << 4
_EV_FALL = 1 << 5
_EV_MUSH = 1 << 6


class NoSpawnSurface(RuntimeError):
    """Columns 0-1 offer no solid surface with head room to stand on."""


# movers pack into small ints: kind(2 bits) | direction(1) | row*COLS+col(11)
def _enemy_code(row, col, direction, kind):
    return (kind << 12) | ((1 if direction > 0 else 0) << 11) | (row * COLS + col)


def _mover_code(row, col, direction):
    return ((1 if direction > 0 else 0) << 11) | (row * COLS + col)


def _enemy_step(solid, e, walk):
    """One tick for one enemy code; None once it leaves the grid.

    Unsupported enemies fall one cell every tick; supported ones walk one
    cell on walk ticks only (one cell per two ticks), reversing on solids
    and grid edges.  Enemies ignore each other.
    """
    idx = e & 2047
    r = idx // COLS
    if r == ROWS - 1 or not solid[idx + COLS]:
        return None if r == ROWS - 1 else e + COLS
    if walk:
        c = idx % COLS
        nc = c + (1 if e & 2048 else -1)
        if nc < 0 or nc >= COLS or solid[r * COLS + nc]:
            return e ^ 2048
        return e + nc - c
    return e


def _mushroom_step(solid, m):
    """One tick for one mushroom code: drift one cell per tick, reverse on
    solids and edges, fall through gaps, gone below the grid."""
    idx = m & 2047
    r = idx // COLS
    if r == ROWS - 1 or not solid[idx + COLS]:
        return None if r == ROWS - 1 else m + COLS
    c = idx % COLS
    nc = c + (1 if m & 2048 else -1)
    if nc < 0 or nc >= COLS or solid[r * COLS + nc]:
        return m ^ 2048
    return m + nc - c


@dataclass(frozen=True)
class Enemy:
    row: int
    col: int
    direction: int
    kind: str


@dataclass(frozen=True)
class Shell:
    row: int
    col: int
    direction: int


@dataclass(frozen=True)
class Mushroom:
    row: int
    col: int
    direction: int


class _World:
    """Static tables derived from (grid, alphabet)."""

    __slots__ = ("solid", "coins", "qcoin", "qmush", "spawn", "enemies0", "dynamic")

    def __init__(self, grid: TileGrid, alphabet: TileAlphabet):
        classes = alphabet.classes
        solid_flags = alphabet.solid
        solid = bytearray(ROWS * COLS)
        coins = set()
        qcoin = set()
        qmush = {}
        enemies = []
        cells = grid.cells.tolist()
        for r in range(ROWS):
            row = cells[r]
            base = r * COLS
            for c in range(COLS):
                cls = classes[row[c]]
                if solid_flags[row[c]]:
                    solid[base + c] = 1
                    if cls == "question-coin":
                        qcoin.add(base + c)
                    elif cls == "question-mushroom":
                        qmush[base + c] = len(qmush)
                elif cls == "coin":
                    coins.add(base + c)
                elif cls == "enemy-goomba":
                    enemies.append(_enemy_code(r, c, -1, _KIND_GOOMBA))
                elif cls == "enemy-koopa":
                    enemies.append(_enemy_code(r, c, -1, _KIND_KOOPA))
                elif cls == "enemy-winged":
                    enemies.append(_enemy_code(r, c, -1, _KIND_WINGED))
        self.solid = bytes(solid)
        self.coins = frozenset(coins)
        self.qcoin = frozenset(qcoin)
        self.qmush = qmush
        self.enemies0 = tuple(enemies)
        self.dynamic = bool(enemies) or bool(qmush)
        # spawn: highest solid surface in columns 0-1, ties toward column 0;
        # a column whose topmost solid sits at row 0 has no head room
        best = None
        for c in (0, 1):
            for r in range(ROWS):
                if solid[r * COLS + c]:
                    if r >= 1 and (best is None or r < best[0]):
                        best = (r, c)
                    break
        self.spawn = (best[0] - 1, best[1]) if best else None


@lru_cache(maxsize=128)
def _world_for(grid: TileGrid, alphabet: TileAlphabet) -> _World:
    return _World(grid, alphabet)


def _world_tick(world, enemies, shells, mush, walk):
    """Action-independent world update: enemies, then shells, then mushrooms.

    Shells slide two cells per tick, ignore gravity, vanish on solids or
    edges, and kill every enemy in a cell they enter (checked against
    post-move enemy positions; kills accumulate so a trailing shell cannot
    re-kill).
    """
    solid = world.solid
    ev = 0
    new_enemies = []
    for e in enemies:
        e2 = _enemy_step(solid, e, walk)
        if e2 is None:
            ev |= _EV_FALL
        else:
            new_enemies.append(e2)
    new_shells = shells
    if shells:
        new_shells = []
        killed = set()
        occupied = {}
        for e in new_enemies:
            occupied.setdefault(e & 2047, []).append(e)
        for s in shells:
            idx = s & 2047
            r, c = divmod(idx, COLS)
            d = 1 if s & 2048 else -1
            alive = True
            for _ in range(2):
                nc = c + d
                if nc < 0 or nc >= COLS or solid[r * COLS + nc]:
                    alive = False
                    break
                c = nc
                hit = occupied.pop(r * COLS + c, None)
                if hit:
                    killed.update(hit)
                    ev |= _EV_SHELL
            if alive:
                new_shells.append(_mover_code(r, c, d))
        if killed:
            new_enemies = [e for e in new_enemies if e not in killed]
        new_shells = tuple(new_shells)
    new_mush = mush
    if mush:
        new_mush = []
        for m in mush:
            m2 = _mushroom_step(solid, m)
            if m2 is not None:
                new_mush.append(m2)
        new_mush = tuple(new_mush)
    return tuple(new_enemies), new_shells, new_mush, ev


def _advance(world, tick, node, action, enemy_at, shared):
    """One tick for one action on an explicit node (the step() engine).

    Order within a tick: agent horizontal, agent vertical (bumps dispense
    question tiles, downward entry into an enemy cell is a stomp, any other
    entry is lateral contact), world update, post-move contact, win check.
    Returns (node', evbits, coins_hit, qcoin_bump, jumped, landed, dead,
    success).
    """
    row, col, air, facing, power, inv, enemies, qmask, mush, shells = node
    solid = world.solid
    ev = 0
    dead = False
    jumped = False
    landed = False
    coins_hit = ()
    qcoin_bump = -1
    killed = ()
    spawn_shells = ()
    spawn_mush = ()

    jumpact = action >= 3
    if air == _GROUND:
        if jumpact:
            dv, nair, jumped = 2, _RISE2, True
        else:
            dv, nair = 0, _GROUND
    elif air == _RISE2:
        dv, nair = (1, _RISE3) if jumpact else (0, _FALL1)
    elif air == _RISE3:
        dv, nair = (1, _APEX) if jumpact else (0, _FALL1)
    elif air == _APEX:
        dv, nair = 0, _FALL1
    elif air == _FALL1:
        dv, nair = -1, _FALL2
    else:
        dv, nair = -2, _FALL2

    dh = _DH[action % 3]
    if dh:
        facing = dh
        nc = col + dh
        if 0 <= nc < COLS and not solid[row * COLS + nc]:
            col = nc
            cell = row * COLS + col
            if cell in world.coins:
                coins_hit += (cell,)
            if enemy_at.get(cell) and inv == 0:
                if power:
                    power, inv = 0, 3
                else:
                    dead = True

    if dv > 0 and not dead:
        for _ in range(dv):
            nr = row - 1
            if nr < 0:
                nair = _FALL1
                break
            tcell = nr * COLS + col
            if solid[tcell]:
                bit = world.qmush.get(tcell)
                if bit is not None and not (qmask >> bit) & 1:
                    qmask |= 1 << bit
                    mr = nr - 1
                    if mr >= 0 and not solid[mr * COLS + col]:
                        # mushrooms emerge moving right and start next tick
                        spawn_mush += (_mover_code(mr, col, 1),)
                elif tcell in world.qcoin:
                    qcoin_bump = tcell
                nair = _FALL1
                break
            row = nr
            if tcell in world.coins:
                coins_hit += (tcell,)
            if enemy_at.get(tcell) and inv == 0:
                if power:
                    power, inv = 0, 3
                else:
                    dead = True
                    break
    elif dv < 0:
        for _ in range(-dv):
            nr = row + 1
            if nr > ROWS - 1:
                dead = True  # fell out of the scene
                break
            tcell = nr * COLS + col
            if solid[tcell]:
                nair = _GROUND
                landed = True
                break
            row = nr
            if tcell in world.coins:
                coins_hit += (tcell,)
            occ = enemy_at.get(tcell)
            if occ:
                ev |= _EV_STOMP
                killed += tuple(occ)
                for code in occ:
                    if code >> 12 == _KIND_KOOPA:
                        spawn_shells += (_mover_code(nr, col, facing),)

    if nair == _GROUND and not dead:
        if row == ROWS - 1 or not solid[(row + 1) * COLS + col]:
            nair = _FALL1

    if dead:
        node2 = (row, col, nair, facing, power, inv, enemies, qmask, mush, shells)
        return node2, ev, coins_hit, qcoin_bump, jumped, landed, True, False

    if killed or spawn_shells:
        kill_set = set(killed)
        left = tuple(e for e in enemies if e not in kill_set)
        en2, sh2, mu2, wev = _world_tick(world, left, shells, mush, (tick + 1) % 2 == 0)
    else:
        en2, sh2, mu2, wev = shared
    ev |= wev
    if spawn_shells:
        sh2 += spawn_shells
    if spawn_mush:
        mu2 += spawn_mush

    acell = row * COLS + col
    if en2:
        for e in en2:
            if e & 2047 == acell and inv == 0:
                if power:
                    power, inv = 0, 3
                else:
                    dead = True
                break
    if mu2 and not dead:
        keep = tuple(m for m in mu2 if m & 2047 != acell)
        if len(keep) != len(mu2):
            power = 1
            ev |= _EV_MUSH
            mu2 = keep

    if inv:
        inv -= 1
    success = col == GOAL_COL and not dead
    node2 = (row, col, nair, facing, power, inv, en2, qmask, mu2, sh2)
    return node2, ev, coins_hit, qcoin_bump, jumped, landed, dead, success


# ---------------------------------------------------------------------------
# public state

@dataclass(frozen=True)
class SimState:
    """One tick of the surrogate world.  Construct via initial_state()."""

    grid: TileGrid
    alphabet: TileAlphabet
    tick: int
    row: int
    col: int
    air: int
    facing: int
    power: int            # 0 small, 1 super
    inv: int              # invulnerability ticks left
    enemy_codes: tuple
    shell_codes: tuple
    mush_codes: tuple
    qmush_mask: int
    coins: frozenset      # collected coin cells
    used_qcoin: frozenset
    events: frozenset
    max_col: int
    jumps: int
    jump_origin: tuple | None
    jump_min_row: int
    dead: bool
    success: bool

    @property
    def airborne(self) -> bool:
        return self.air != _GROUND

    @property
    def vertical_velocity(self) -> int:
        return _PHASE_VV[self.air]

    @property
    def power_name(self) -> str:
        return "super" if self.power else "small"

    @property
    def terminal(self) -> bool:
        return self.dead or self.success

    @property
    def enemies(self) -> tuple:
        out = []
        for e in self.enemy_codes:
            idx = e & 2047
            out.append(Enemy(idx // COLS, idx % COLS,
                             1 if e & 2048 else -1, _KIND_NAME[e >> 12]))
        return tuple(out)

    @property
    def shells(self) -> tuple:
        return tuple(Shell((s & 2047) // COLS, (s & 2047) % COLS,
                           1 if s & 2048 else -1) for s in self.shell_codes)

    @property
    def mushrooms(self) -> tuple:
        return tuple(Mushroom((m & 2047) // COLS, (m & 2047) % COLS,
                              1 if m & 2048 else -1) for m in self.mush_codes)


def initial_state(grid: TileGrid, alphabet: TileAlphabet = CANONICAL_ALPHABET) -> SimState:
    world = _world_for(grid, alphabet)
    if world.spawn is None:
        raise NoSpawnSurface("no solid surface in columns 0-1")
    row, col = world.spawn
    return SimState(
        grid=grid, alphabet=alphabet, tick=0, row=row, col=col,
        air=_GROUND if (row == ROWS - 1 or world.solid[(row + 1) * COLS + col]) else _FALL1,
        facing=1, power=0, inv=0,
        enemy_codes=world.enemies0, shell_codes=(), mush_codes=(),
        qmush_mask=0, coins=frozenset(), used_qcoin=frozenset(),
        events=frozenset(), max_col=col, jumps=0,
        jump_origin=None, jump_min_row=row, dead=False, success=False,
    )


def step(state: SimState, action: str) -> SimState:
    """Advance one tick.  Terminal states return themselves unchanged."""
    if state.terminal:
        return state
    code = _ACTION_CODE[action]
    world = _world_for(state.grid, state.alphabet)
    node = (state.row, state.col, state.air, state.facing, state.power,
            state.inv, state.enemy_codes, state.qmush_mask,
            state.mush_codes, state.shell_codes)
    enemy_at = {}
    for e in state.enemy_codes:
        enemy_at.setdefault(e & 2047, []).append(e)
    shared = _world_tick(world, state.enemy_codes, state.shell_codes,
                         state.mush_codes, (state.tick + 1) % 2 == 0)
    node2, ev, coins_hit, qcoin_bump, jumped, landed, dead, success = _advance(
        world, state.tick, node, code, enemy_at, shared)
    row, col, air, facing, power, inv, enemies, qmask, mush, shells = node2

    events = set(state.events)
    if jumped:
        events.add("jump")
    if ev & _EV_STOMP:
        events.add("stomp-kill")
    if ev & _EV_SHELL:
        events.add("shell-kill")
    if ev & _EV_FALL:
        events.add("enemy-fall-death")
    if ev & _EV_MUSH:
        events.add("mushroom")
    coins = state.coins
    for cell in coins_hit:
        if cell not in coins:
            coins = coins | {cell}
            events.add("coin")
    used_qcoin = state.used_qcoin
    if qcoin_bump >= 0 and qcoin_bump not in used_qcoin:
        used_qcoin = used_qcoin | {qcoin_bump}
        events.add("coin")

    origin = state.jump_origin
    min_row = state.jump_min_row
    jumps = state.jumps
    if jumped:
        origin = (state.row, state.col)
        min_row = state.row
        jumps += 1
    if origin is not None:
        min_row = min(min_row, row)
        if landed:
            if origin[0] - min_row >= HIGH_JUMP_RISE:
                events.add("high-jump")
            if abs(col - origin[1]) >= LONG_JUMP_SPAN:
                events.add("long-jump")
            origin = None

    return SimState(
        grid=state.grid, alphabet=state.alphabet, tick=state.tick + 1,
        row=row, col=col, air=air, facing=facing, power=power, inv=inv,
        enemy_codes=enemies, shell_codes=shells, mush_codes=mush,
        qmush_mask=qmask, coins=coins, used_qcoin=used_qcoin,
        events=frozenset(events), max_col=max(state.max_col, col),
        jumps=jumps, jump_origin=origin, jump_min_row=min_row,
        dead=dead, success=success,
    )


# ---------------------------------------------------------------------------
# A* playability agent

@dataclass(frozen=True)
class PlaythroughTrace:
    completion: float
    events: frozenset
    steps: int
    success: bool
    actions: tuple
    max_col: int


def classify_events(trace: PlaythroughTrace) -> tuple:
    """The 8 agent behaviour bits, in the fixed EVENT_ORDER."""
    return tuple(1 if name in trace.events else 0 for name in EVENT_ORDER)


def astar_play(grid: TileGrid, node_budget: int = NODE_BUDGET,
               alphabet: TileAlphabet = CANONICAL_ALPHABET,
               tick_budget: int = TICK_BUDGET) -> PlaythroughTrace:
    """Drive the agent to column 55 with A* over the simulator graph.

    Cost is ticks, the heuristic is the remaining columns (admissible and
    consistent: at most one column per tick), and ties prefer fewer jumps,
    then lower tick, then discovery order with plain moves enumerated before
    jumps.  Expands at most node_budget nodes; on exhaustion (or an
    unreachable goal) the trace follows the generated state with the
    greatest column progress.

    Enemy motion never depends on the agent, so configurations are rolled
    forward once per tick and shared by the whole search.  State keys use a
    canonical tick: once the (parity, configuration) signature repeats, time
    folds into the cycle, collapsing equivalent waiting states.  Agent kills
    are a bitmask over the scene's initial enemies; shells and mushrooms
    (agent-caused, hence rare) live in the state explicitly.
    """
    world = _world_for(grid, alphabet)
    if world.spawn is None:
        raise NoSpawnSurface("no solid surface in columns 0-1")
    solid = world.solid
    coin_cells = world.coins
    qcoin = world.qcoin
    qmush = world.qmush
    dynamic = world.dynamic
    row0, col0 = world.spawn
    air0 = _GROUND if (row0 == ROWS - 1 or solid[(row0 + 1) * COLS + col0]) else _FALL1
    # agent fields pack into one int: cell(11 bits) | air(3) | facing(1) |
    # power(1) | inv(2); the static-world key drops the low four bits
    aint0 = ((row0 * COLS + col0) << 7) | (air0 << 4) | (1 << 3)

    codes0 = world.enemies0
    koopa_bits = 0
    occ0 = {}
    for i, e in enumerate(codes0):
        if e >> 12 == _KIND_KOOPA:
            koopa_bits |= 1 << i
        cell = e & 2047
        occ0[cell] = occ0.get(cell, 0) | (1 << i)
    traj_occ = [occ0]      # per tick: cell -> id bitmask
    traj_fall = [0]        # per tick: ids leaving the grid on that tick
    latest = [codes0]
    sig_seen = {(0, codes0): 0}
    cyc = [0, 0]           # cycle start, period (0 until detected)

    def _extend():
        cur = latest[0]
        nt = len(traj_occ)
        walk = nt % 2 == 0
        fall = 0
        occ = {}
        out = []
        for i, e in enumerate(cur):
            if e is None:
                out.append(None)
                continue
            e2 = _enemy_step(solid, e, walk)
            if e2 is None:
                fall |= 1 << i
                out.append(None)
                continue
            out.append(e2)
            cell = e2 & 2047
            occ[cell] = occ.get(cell, 0) | (1 << i)
        nxt = tuple(out)
        latest[0] = nxt
        traj_occ.append(occ)
        traj_fall.append(fall)
        sig = (nt & 1, nxt)
        first = sig_seen.get(sig)
        if first is None:
            sig_seen[sig] = nt
        else:
            # a departure inside the cycle would change the configuration,
            # so traj_fall is identically 0 over the folded range
            cyc[0] = first
            cyc[1] = nt - first

    def canon(t):
        per = cyc[1]
        if per and t >= cyc[0]:
            return cyc[0] + (t - cyc[0]) % per
        while t >= len(traj_occ) and not cyc[1]:
            _extend()
        per = cyc[1]
        if per and t >= cyc[0]:
            return cyc[0] + (t - cyc[0]) % per
        return t

    def _sweep(shs, kb, occn):
        # shells against post-move enemy positions; kills accumulate so a
        # trailing shell cannot re-kill
        ev = 0
        kk = 0
        out = []
        for s in shs:
            sidx = s & 2047
            r2, c2 = divmod(sidx, COLS)
            d = 1 if s & 2048 else -1
            alive = True
            for _ in range(2):
                c2 += d
                if c2 < 0 or c2 >= COLS or solid[r2 * COLS + c2]:
                    alive = False
                    break
                m = occn.get(r2 * COLS + c2, 0) & ~(kb | kk)
                if m:
                    kk |= m
                    ev = _EV_SHELL
            if alive:
                out.append(((1 if d > 0 else 0) << 11) | (r2 * COLS + c2))
        return tuple(out), kk, ev

    empty_occ = {}

    # entry: 0 aint, 1 killed, 2 qmask, 3 mush, 4 shells, 5 g, 6 jumps,
    #        7 maxcol, 8 parent, 9 action, 10 evbits, 11 coins_hit,
    #        12 qcoin_bump, 13 flags (1 jumped, 2 landed), 14 key
    key0 = (0, aint0, 0, 0) if dynamic else aint0 >> 4
    entries = [(aint0, 0, 0, (), (), 0, 0, col0, -1, -1, 0, (), -1, 0, key0)]
    best_map = {key0: (0, 0)}
    heap = [(GOAL_COL - col0, 0, 0, 0, 0)]
    seq = 1
    best_idx, best_maxcol = 0, col0
    goal_idx = -1
    pops = 0
    heappush = heapq.heappush
    heappop = heapq.heappop

    while heap and pops < node_budget:
        f, jumps, g, _s, idx = heappop(heap)
        ent = entries[idx]
        if best_map.get(ent[14]) != (g, jumps):
            continue  # superseded by a better route to the same state
        pops += 1
        aint = ent[0]
        idxrc = aint >> 7
        col = idxrc % COLS
        if col == GOAL_COL:
            goal_idx = idx
            break
        if g >= tick_budget:
            continue
        killed, qmask, mush, shells = ent[1], ent[2], ent[3], ent[4]
        maxcol = ent[7]
        row = idxrc // COLS
        air = (aint >> 4) & 7
        fb = (aint >> 3) & 1
        power = (aint >> 2) & 1
        inv = aint & 3
        g1 = g + 1
        if dynamic:
            occ_pre = traj_occ[canon(g)]
            ct1 = canon(g1)
            occ_next = traj_occ[ct1]
            fall_bits = traj_fall[ct1]
        else:
            ct1 = 0
            occ_pre = occ_next = empty_occ
            fall_bits = 0
        # action-independent world motion, shared across the six children;
        # recomputed per-action only when a stomp changes the kill set
        if shells:
            sw_shells, sw_kill, sw_ev = _sweep(shells, killed, occ_next)
        else:
            sw_shells, sw_kill, sw_ev = (), 0, 0
        if mush:
            moved_mush = tuple(m2 for m2 in (_mushroom_step(solid, m) for m in mush)
                               if m2 is not None)
        else:
            moved_mush = ()

        for action in (_ORDER_GROUND if air <= _RISE3 else _ORDER_AIR):
            jumpact = action >= 3
            jflag = 0
            if air == _GROUND:
                if jumpact:
                    dv, nair, jflag = 2, _RISE2, 1
                else:
                    dv, nair = 0, _GROUND
            elif air == _RISE2:
                dv, nair = (1, _RISE3) if jumpact else (0, _FALL1)
            elif air == _RISE3:
                dv, nair = (1, _APEX) if jumpact else (0, _FALL1)
            elif air == _APEX:
                dv, nair = 0, _FALL1
            elif air == _FALL1:
                dv, nair = -1, _FALL2
            else:
                dv, nair = -2, _FALL2

            nrow, ncol, nfb, npw, ninv = row, col, fb, power, inv
            nkilled, nqmask = killed, qmask
            evb = 0
            coins_hit = ()
            qb = -1
            dead = False
            landed = False
            stomped = False
            new_shell = ()
            new_mush = ()

            dh = _DH[action % 3]
            if dh:
                nfb = 1 if dh > 0 else 0
                c2 = ncol + dh
                if 0 <= c2 < COLS and not solid[nrow * COLS + c2]:
                    ncol = c2
                    cell = nrow * COLS + ncol
                    if cell in coin_cells:
                        coins_hit = (cell,)
                    if occ_pre.get(cell, 0) & ~nkilled and ninv == 0:
                        if npw:
                            npw, ninv = 0, 3
                        else:
                            dead = True

            if dv > 0 and not dead:
                for _ in range(dv):
                    r2 = nrow - 1
                    if r2 < 0:
                        nair = _FALL1
                        break
                    tcell = r2 * COLS + ncol
                    if solid[tcell]:
                        bit = qmush.get(tcell)
                        if bit is not None and not (nqmask >> bit) & 1:
                            nqmask |= 1 << bit
                            mr = r2 - 1
                            if mr >= 0 and not solid[mr * COLS + ncol]:
                                new_mush = ((1 << 11) | (mr * COLS + ncol),)
                        elif tcell in qcoin:
                            qb = tcell
                        nair = _FALL1
                        break
                    nrow = r2
                    if tcell in coin_cells:
                        coins_hit += (tcell,)
                    if occ_pre.get(tcell, 0) & ~nkilled and ninv == 0:
                        if npw:
                            npw, ninv = 0, 3
                        else:
                            dead = True
                            break
            elif dv < 0:
                for _ in range(-dv):
                    r2 = nrow + 1
                    if r2 > ROWS - 1:
                        dead = True
                        break
                    tcell = r2 * COLS + ncol
                    if solid[tcell]:
                        nair = _GROUND
                        landed = True
                        break
                    nrow = r2
                    if tcell in coin_cells:
                        coins_hit += (tcell,)
                    m = occ_pre.get(tcell, 0) & ~nkilled
                    if m:
                        evb |= _EV_STOMP
                        stomped = True
                        nkilled |= m
                        kb2 = m & koopa_bits
                        while kb2:
                            new_shell += ((nfb << 11) | tcell,)
                            kb2 &= kb2 - 1
            if dead:
                continue
            if nair == _GROUND and (nrow == ROWS - 1
                                    or not solid[(nrow + 1) * COLS + ncol]):
                nair = _FALL1

            if stomped and shells:
                nshells, skill, sev = _sweep(shells, nkilled, occ_next)
            else:
                nshells, skill, sev = sw_shells, sw_kill, sw_ev
            nkilled |= skill
            evb |= sev
            if new_shell:
                nshells += new_shell
            nmush = moved_mush
            if new_mush:
                nmush += new_mush
            if fall_bits & ~nkilled:
                evb |= _EV_FALL

            acell = nrow * COLS + ncol
            if occ_next.get(acell, 0) & ~nkilled and ninv == 0:
                if npw:
                    npw, ninv = 0, 3
                else:
                    continue  # caught by an enemy after the move
            if nmush:
                keep = tuple(m for m in nmush if m & 2047 != acell)
                if len(keep) != len(nmush):
                    npw = 1
                    evb |= _EV_MUSH
                    nmush = keep
            if ninv:
                ninv -= 1

            naint = (acell << 7) | (nair << 4) | (nfb << 3) | (npw << 2) | ninv
            if dynamic:
                if nmush or nshells:
                    key = (ct1, naint, nkilled, nqmask, nmush, nshells)
                else:
                    key = (ct1, naint, nkilled, nqmask)
            else:
                key = naint >> 4
            j1 = jumps + jflag
            prev = best_map.get(key)
            if prev is not None and prev <= (g1, j1):
                continue
            best_map[key] = (g1, j1)
            mc = ncol if ncol > maxcol else maxcol
            entries.append((naint, nkilled, nqmask, nmush, nshells, g1, j1, mc,
                            idx, action, evb, coins_hit, qb,
                            jflag | (2 if landed else 0), key))
            ni = len(entries) - 1
            if mc > best_maxcol:
                best_maxcol, best_idx = mc, ni
            heappush(heap, (g1 + GOAL_COL - ncol, j1, g1, seq, ni))
            seq += 1

    final = goal_idx if goal_idx >= 0 else best_idx
    chain = []
    i = final
    while i >= 0:
        chain.append(i)
        i = entries[i][8]
    chain.reverse()

    # fold the chain into a trace; the bookkeeping mirrors step()
    events = set()
    collected = set()
    used_q = set()
    origin = None
    min_row = 0
    actions = []
    for i in chain[1:]:
        ent = entries[i]
        idxrc = ent[0] >> 7
        r, c = divmod(idxrc, COLS)
        evb = ent[10]
        if evb:
            if evb & _EV_STOMP:
                events.add("stomp-kill")
            if evb & _EV_SHELL:
                events.add("shell-kill")
            if evb & _EV_FALL:
                events.add("enemy-fall-death")
            if evb & _EV_MUSH:
                events.add("mushroom")
        for cell in ent[11]:
            if cell not in collected:
                collected.add(cell)
                events.add("coin")
        qb = ent[12]
        if qb >= 0 and qb not in used_q:
            used_q.add(qb)
            events.add("coin")
        fl = ent[13]
        if fl & 1:
            events.add("jump")
            pa = entries[ent[8]][0] >> 7
            origin = (pa // COLS, pa % COLS)
            min_row = origin[0]
        if origin is not None:
            if r < min_row:
                min_row = r
            if fl & 2:
                if origin[0] - min_row >= HIGH_JUMP_RISE:
                    events.add("high-jump")
                if abs(c - origin[1]) >= LONG_JUMP_SPAN:
                    events.add("long-jump")
                origin = None
        actions.append(_ACTION_NAME[ent[9]])

    last = entries[final]
    return PlaythroughTrace(
        completion=(last[7] + 1) / COLS,
        events=frozenset(events),
        steps=last[5],
        success=(last[0] >> 7) % COLS == GOAL_COL,
        actions=tuple(actions),
        max_col=last[7],
    )
